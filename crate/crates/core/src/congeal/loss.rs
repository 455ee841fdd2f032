//! Distortion, complexity and total congealing losses on a tape.

use super::config::{CongealConfig, Normalisation};
use crate::autodiff::{Real, Tape, Var};
use crate::error::{Error, Result};
use crate::models::{aligner_forward, decode, encode, positional_penalty, AlignerOutput, Bound, PenaltyWeights};

fn batch_and_pixels<T: Real>(tape: &Tape<T>, x: Var) -> (usize, usize) {
    let s = tape.shape(x);
    (s[0], s[1..].iter().product())
}

fn scaled<T: Real>(tape: &mut Tape<T>, v: Var, by: f64) -> Result<Var> {
    if by == 1.0 {
        Ok(v)
    } else {
        tape.scale(v, by)
    }
}

/// `sum_i |warped_i - reference|_1`, divided by batch size times pixel
/// count under [`Normalisation::Mean`].
pub fn distortion_loss<T: Real>(tape: &mut Tape<T>, warped: Var, reference: Var, norm: Normalisation) -> Result<Var> {
    let diff = tape.sub_broadcast(warped, reference)?;
    let l1 = tape.l1_sum(diff)?;
    let (n, p) = batch_and_pixels(tape, warped);
    match norm {
        Normalisation::Mean => scaled(tape, l1, 1.0 / (n * p) as f64),
        Normalisation::Sum => Ok(l1),
    }
}

/// The two parts of the complexity term.
pub struct Complexity {
    /// Reconstruction error, normalised like the distortion term.
    pub reconstruction: Var,
    /// Positional code penalty. The mean mode divides it by batch size times
    /// pixel count as well, so `gamma` weighs it against the per-image
    /// reconstruction sum exactly as in the summed form.
    pub penalty: Var,
    /// `reconstruction + gamma * penalty`.
    pub total: Var,
    pub codes: Var,
}

pub fn complexity_loss<T: Real>(
    tape: &mut Tape<T>,
    net: &Bound<'_>,
    warped: Var,
    weights: &PenaltyWeights,
    gamma: f64,
    norm: Normalisation,
) -> Result<Complexity> {
    let z = encode(tape, net, warped)?;
    if tape.shape(z)[1] != weights.w.len() {
        return Err(Error::ShapeMismatch {
            op: "complexity_loss",
            left: tape.shape(z).to_vec(),
            right: vec![weights.w.len()],
        });
    }
    let recon = decode(tape, net, z)?;
    let diff = tape.sub(recon, warped)?;
    let rec = tape.l1_sum(diff)?;
    let pen = positional_penalty(tape, z, weights)?;
    let (n, p) = batch_and_pixels(tape, warped);
    let (rec, pen) = match norm {
        Normalisation::Mean => {
            let by = 1.0 / (n * p) as f64;
            (scaled(tape, rec, by)?, scaled(tape, pen, by)?)
        }
        Normalisation::Sum => (rec, pen),
    };
    let total = if gamma == 0.0 {
        rec
    } else {
        let g = scaled(tape, pen, gamma)?;
        tape.add(rec, g)?
    };
    Ok(Complexity {
        reconstruction: rec,
        penalty: pen,
        total,
        codes: z,
    })
}

/// Everything recorded for one batch.
pub struct Losses {
    pub aligner: AlignerOutput,
    pub distortion: Option<Var>,
    pub complexity: Option<Complexity>,
    pub total: Var,
}

/// Aligns `images` to `reference` and records `D + lambda * C` (or only
/// `lambda * C` for the complexity-only arm) on one tape.
pub fn total_loss<T: Real>(
    tape: &mut Tape<T>,
    net: &Bound<'_>,
    images: Var,
    reference: Var,
    cfg: &CongealConfig,
    weights: &PenaltyWeights,
) -> Result<Losses> {
    let aligner = aligner_forward(tape, net, images, reference)?;
    let distortion = if cfg.uses_distortion() {
        Some(distortion_loss(tape, aligner.warped, reference, cfg.normalisation)?)
    } else {
        None
    };
    let complexity = if cfg.uses_complexity() {
        Some(complexity_loss(
            tape,
            net,
            aligner.warped,
            weights,
            cfg.gamma,
            cfg.normalisation,
        )?)
    } else {
        None
    };
    let total = match (distortion, &complexity) {
        (Some(d), Some(c)) => {
            let lc = scaled(tape, c.total, cfg.lambda)?;
            tape.add(d, lc)?
        }
        (Some(d), None) => d,
        (None, Some(c)) => scaled(tape, c.total, cfg.lambda)?,
        (None, None) => return Err(Error::InvalidConfig("no loss term is active".into())),
    };
    Ok(Losses {
        aligner,
        distortion,
        complexity,
        total,
    })
}
