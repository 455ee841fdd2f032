use crate::autodiff::{Real, Tape, Var};
use crate::error::{Error, Result};

/// Positional code weights `w_l = l^k / sum_m m^k`, `l = 1..b`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyWeights {
    pub k: u32,
    pub w: Vec<f64>,
}

impl PenaltyWeights {
    pub fn new(b: usize, k: u32) -> Result<Self> {
        if b == 0 || k == 0 {
            return Err(Error::InvalidConfig(format!(
                "penalty needs b >= 1 and k >= 1, got b={b} k={k}"
            )));
        }
        let raw: Vec<f64> = (1..=b).map(|l| (l as f64).powi(k as i32)).collect();
        let total: f64 = raw.iter().sum();
        Ok(PenaltyWeights {
            k,
            w: raw.into_iter().map(|v| v / total).collect(),
        })
    }

    /// `w . z` for a single code.
    pub fn apply(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.w.len() {
            return Err(Error::ShapeMismatch {
                op: "positional_penalty",
                left: vec![z.len()],
                right: vec![self.w.len()],
            });
        }
        Ok(self.w.iter().zip(z).map(|(a, b)| a * b).sum())
    }
}

/// `sum_i w . z_i` over the codes `z: N x b` on a tape.
pub fn positional_penalty<T: Real>(tape: &mut Tape<T>, z: Var, weights: &PenaltyWeights) -> Result<Var> {
    tape.weighted_dot(z, &weights.w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cases() {
        let w = PenaltyWeights::new(4, 1).unwrap();
        assert!((w.apply(&[1.0; 4]).unwrap() - 1.0).abs() < 1e-15);
        assert!((w.apply(&[1.0, 0.0, 0.0, 0.0]).unwrap() - 0.1).abs() < 1e-15);
        let w = PenaltyWeights::new(3, 2).unwrap();
        assert!((w.apply(&[0.0, 1.0, 0.0]).unwrap() - 4.0 / 14.0).abs() < 1e-15);
    }

    #[test]
    fn weights_are_positive_increasing_and_normalised() {
        for (b, k) in [(1, 1), (5, 1), (64, 1), (64, 3)] {
            let w = PenaltyWeights::new(b, k).unwrap();
            assert!((w.w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.w[0] > 0.0);
            assert!(w.w.windows(2).all(|p| p[1] > p[0]));
        }
        assert!(PenaltyWeights::new(4, 0).is_err());
    }

    #[test]
    fn gradient_is_w() {
        let w = PenaltyWeights::new(3, 1).unwrap();
        let mut tape = Tape::<f64>::new();
        let z = tape
            .param(crate::autodiff::Tensor::new([2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap())
            .unwrap();
        let p = positional_penalty(&mut tape, z, &w).unwrap();
        let g = tape.backward(p).unwrap();
        let expect: Vec<f64> = w.w.iter().chain(&w.w).copied().collect();
        assert_eq!(g.tensor(z).data(), expect.as_slice());
    }
}
