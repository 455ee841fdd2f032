//! Central-difference validation of tape gradients (double precision).

use rand::seq::index::sample;
use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Options for [`grad_check`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates sampled per leaf; all of them when the leaf is smaller.
    pub samples: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            samples: 24,
        }
    }
}

/// Compares analytic gradients of `f` against central differences and
/// returns, per leaf, `max |analytic - numeric| / max(1, |numeric|)` over
/// the sampled coordinates.
///
/// `f` receives a fresh tape and the leaf handles (in `leaves` order) and
/// must return a scalar.
pub fn grad_check<F, R>(f: F, leaves: &[Tensor<f64>], opts: GradCheckOptions, rng: &mut R) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    R: Rng + ?Sized,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = values
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new();
    let vars = leaves
        .iter()
        .map(|t| tape.param(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut errors = Vec::with_capacity(leaves.len());
    let mut work: Vec<Tensor<f64>> = leaves.to_vec();
    for (li, var) in vars.iter().enumerate() {
        let analytic = grads.tensor(*var);
        let n = leaves[li].len();
        let coords: Vec<usize> = if n <= opts.samples {
            (0..n).collect()
        } else {
            sample(rng, n, opts.samples).into_vec()
        };
        let mut worst = 0.0f64;
        for c in coords {
            let orig = work[li].data()[c];
            work[li].data_mut()[c] = orig + opts.step;
            let plus = eval(&work)?;
            work[li].data_mut()[c] = orig - opts.step;
            let minus = eval(&work)?;
            work[li].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let err = (analytic.data()[c] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
        errors.push(worst);
    }
    Ok(errors)
}
