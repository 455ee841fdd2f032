//! Forward passes of the aligner, encoder and decoder on a tape.

use super::spec::{Activation, LayerKind, LayerSpec, NetworkSpec};
use super::state::{Layout, Part, Slot};
use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::warp::perturb::keeps_orientation;
use crate::warp::{corners_to_homography, WarpParams};

/// Which parts of the model receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    pub aligner: bool,
    pub autoencoder: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable {
        aligner: true,
        autoencoder: true,
    };
    pub const NONE: Trainable = Trainable {
        aligner: false,
        autoencoder: false,
    };

    fn wants(&self, part: Part) -> bool {
        match part {
            Part::Aligner => self.aligner,
            Part::Encoder | Part::Decoder => self.autoencoder,
        }
    }
}

/// Model weights recorded on a tape.
pub struct Bound<'a> {
    pub spec: &'a NetworkSpec,
    pub layout: &'a Layout,
    pub vars: Vec<Var>,
}

/// Puts `params` on `tape`, as trainable leaves or constants per `trainable`.
pub fn bind<'a, T: Real>(
    tape: &mut Tape<T>,
    spec: &'a NetworkSpec,
    layout: &'a Layout,
    params: &[Tensor<T>],
    trainable: Trainable,
) -> Result<Bound<'a>> {
    if params.len() != layout.params.len() {
        return Err(Error::InvalidSpec(format!(
            "expected {} weight tensors, got {}",
            layout.params.len(),
            params.len()
        )));
    }
    let vars = layout
        .params
        .iter()
        .zip(params)
        .map(|(info, p)| tape.leaf(p.clone(), trainable.wants(info.part)))
        .collect::<Result<_>>()?;
    Ok(Bound { spec, layout, vars })
}

fn run_stack<T: Real>(
    tape: &mut Tape<T>,
    layers: &[LayerSpec],
    slots: &[Option<Slot>],
    vars: &[Var],
    mut x: Var,
) -> Result<Var> {
    for (layer, slot) in layers.iter().zip(slots) {
        x = match (layer.kind, slot) {
            (LayerKind::Conv { kernel, stride, .. }, Some(s)) => {
                tape.conv2d(x, vars[s.weight], Some(vars[s.bias]), stride, (kernel - 1) / 2)?
            }
            (LayerKind::Linear { .. }, Some(s)) => {
                let shape = tape.shape(x).to_vec();
                if shape.len() != 2 {
                    let per = shape[1..].iter().product();
                    x = tape.reshape(x, &[shape[0], per])?;
                }
                tape.linear(x, vars[s.weight], Some(vars[s.bias]))?
            }
            (LayerKind::Upsample, _) => tape.upsample2x(x)?,
            (
                LayerKind::Reshape {
                    channels,
                    height,
                    width,
                },
                _,
            ) => {
                let n = tape.shape(x)[0];
                tape.reshape(x, &[n, channels, height, width])?
            }
            _ => return Err(Error::InvalidSpec("layer without its weights".into())),
        };
        x = match layer.activation {
            Activation::None => x,
            Activation::Tanh => tape.tanh(x)?,
            Activation::Sigmoid => tape.sigmoid(x)?,
        };
    }
    Ok(x)
}

fn check_images<T: Real>(tape: &Tape<T>, spec: &NetworkSpec, x: Var, op: &'static str) -> Result<usize> {
    let shape = tape.shape(x);
    let want = [spec.channels, spec.height, spec.width];
    if shape.len() != 4 || shape[1..] != want {
        return Err(Error::ShapeMismatch {
            op,
            left: shape.to_vec(),
            right: vec![0, want[0], want[1], want[2]],
        });
    }
    Ok(shape[0])
}

/// Result of [`aligner_forward`].
pub struct AlignerOutput {
    /// Cumulative corner displacements, `N x 8`.
    pub params: Var,
    /// Input images warped by `params`.
    pub warped: Var,
    /// Residual updates dropped because they would have produced a
    /// degenerate warp.
    pub flagged: usize,
}

/// Runs every aligner block. Block `t` sees the input warped by the
/// displacements accumulated so far next to the reference and emits a
/// residual, clamped to the trust radius, that is added to the total.
pub fn aligner_forward<T: Real>(
    tape: &mut Tape<T>,
    net: &Bound<'_>,
    images: Var,
    reference: Var,
) -> Result<AlignerOutput> {
    let spec = net.spec;
    let n = check_images(tape, spec, images, "aligner_forward")?;
    if tape.shape(reference) != [1, spec.channels, spec.height, spec.width] {
        return Err(Error::ShapeMismatch {
            op: "aligner_forward reference",
            left: tape.shape(reference).to_vec(),
            right: vec![1, spec.channels, spec.height, spec.width],
        });
    }
    let radius = spec.trust_radius * spec.side();
    let mut total: Option<Var> = None;
    let mut flagged = 0;
    for slots in &net.layout.aligner {
        let current = match total {
            Some(d) => tape.warp(images, d)?,
            None => images,
        };
        let input = tape.concat_channels(current, reference)?;
        let raw = run_stack(tape, &spec.aligner, slots, &net.vars, input)?;
        let residual = tape.clamp(raw, radius)?;
        let next = match total {
            Some(d) => tape.add(d, residual)?,
            None => residual,
        };
        let bad = degenerate_rows(tape.value(next), spec.width, spec.height);
        total = Some(if bad.is_empty() {
            next
        } else {
            flagged += bad.len();
            let mut mask = Tensor::full([n, 8], T::one());
            for &i in &bad {
                mask.data_mut()[8 * i..8 * i + 8].fill(T::zero());
            }
            let mask = tape.constant(mask)?;
            let kept = tape.mul(residual, mask)?;
            match total {
                Some(d) => tape.add(d, kept)?,
                None => kept,
            }
        });
    }
    let params = total.ok_or_else(|| Error::InvalidSpec("aligner without blocks".into()))?;
    let warped = tape.warp(images, params)?;
    Ok(AlignerOutput {
        params,
        warped,
        flagged,
    })
}

fn degenerate_rows<T: Real>(d: &Tensor<T>, w: usize, h: usize) -> Vec<usize> {
    d.data()
        .chunks(8)
        .enumerate()
        .filter(|(_, row)| {
            let p: Vec<f64> = row.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
            let Ok(p) = WarpParams::from_slice(&p) else {
                return true;
            };
            match corners_to_homography(&p, w, h) {
                Ok(hom) => !keeps_orientation(&hom, w, h),
                Err(_) => true,
            }
        })
        .map(|(i, _)| i)
        .collect()
}

/// Codes `N x b` in `[0, 1]` for `images: N x C x H x W`.
pub fn encode<T: Real>(tape: &mut Tape<T>, net: &Bound<'_>, images: Var) -> Result<Var> {
    check_images(tape, net.spec, images, "encode")?;
    run_stack(tape, &net.spec.encoder, &net.layout.encoder, &net.vars, images)
}

/// Images `N x C x H x W` from codes `z: N x b`.
pub fn decode<T: Real>(tape: &mut Tape<T>, net: &Bound<'_>, z: Var) -> Result<Var> {
    let b = net.spec.code_size();
    match tape.shape(z) {
        &[_, zb] if zb == b => {}
        s => {
            return Err(Error::ShapeMismatch {
                op: "decode",
                left: s.to_vec(),
                right: vec![0, b],
            })
        }
    }
    run_stack(tape, &net.spec.decoder, &net.layout.decoder, &net.vars, z)
}
