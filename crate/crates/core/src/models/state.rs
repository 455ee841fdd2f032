//! Learned weights and their optimiser moments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{layer_shapes, LayerSpec, NetworkSpec, Shape};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Real, Tensor};
use crate::error::{Error, Result};

/// Which network a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Aligner,
    Encoder,
    Decoder,
}

/// Position of a layer's weight and bias in the flat parameter list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub weight: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub part: Part,
    pub fan_in: usize,
    pub zero_init: bool,
}

/// Index of every learnable tensor, derived from a spec.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub params: Vec<ParamInfo>,
    pub aligner: Vec<Vec<Option<Slot>>>,
    pub encoder: Vec<Option<Slot>>,
    pub decoder: Vec<Option<Slot>>,
}

impl Layout {
    pub fn new(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut params = Vec::new();
        let mut stack = |prefix: String, layers: &[LayerSpec], input: Shape, part: Part, zero_last: bool| {
            let mut shape = input;
            let mut slots = Vec::with_capacity(layers.len());
            for (i, layer) in layers.iter().enumerate() {
                let (p, out) = layer_shapes(layer, shape)?;
                shape = out;
                slots.push(p.map(|(wshape, nb)| {
                    let fan_in = wshape[1..].iter().product();
                    let zero_init = zero_last && i + 1 == layers.len();
                    let slot = Slot {
                        weight: params.len(),
                        bias: params.len() + 1,
                    };
                    params.push(ParamInfo {
                        name: format!("{prefix}.{i}.weight"),
                        shape: wshape,
                        part,
                        fan_in,
                        zero_init,
                    });
                    params.push(ParamInfo {
                        name: format!("{prefix}.{i}.bias"),
                        shape: vec![nb],
                        part,
                        fan_in,
                        zero_init,
                    });
                    slot
                }));
            }
            Ok::<_, Error>((slots, shape))
        };
        let aligner_in = Shape::Map {
            c: 2 * spec.channels,
            h: spec.height,
            w: spec.width,
        };
        let mut aligner = Vec::with_capacity(spec.aligner_blocks);
        for b in 0..spec.aligner_blocks {
            aligner.push(stack(format!("aligner.{b}"), &spec.aligner, aligner_in, Part::Aligner, true)?.0);
        }
        let (encoder, code) = stack(
            "encoder".into(),
            &spec.encoder,
            spec.image_shape(),
            Part::Encoder,
            false,
        )?;
        let (decoder, _) = stack("decoder".into(), &spec.decoder, code, Part::Decoder, false)?;
        Ok(Layout {
            params,
            aligner,
            encoder,
            decoder,
        })
    }
}

/// All weights of the aligner and the autoencoder plus one Adam state per
/// tensor. Weights are kept in single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub spec: NetworkSpec,
    pub layout: Layout,
    pub params: Vec<Tensor<f32>>,
    pub moments: Vec<AdamState<f32>>,
}

impl ModelState {
    /// Hidden layers uniform in `+-1/sqrt(fan_in)`; the last layer of each
    /// aligner block starts at zero so the initial warp is the identity.
    pub fn new(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let layout = Layout::new(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: Vec<Tensor<f32>> = layout
            .params
            .iter()
            .map(|p| {
                if p.zero_init {
                    Tensor::zeros(p.shape.clone())
                } else {
                    let bound = 1.0 / (p.fan_in as f32).sqrt();
                    Tensor::from_fn(p.shape.clone(), |_| rng.random_range(-bound..=bound))
                }
            })
            .collect();
        let moments = params.iter().map(|t| AdamState::new(t.len())).collect();
        Ok(ModelState {
            spec: spec.clone(),
            layout,
            params,
            moments,
        })
    }

    /// Rebuilds a state from stored tensors, checking them against the spec.
    pub fn from_parts(spec: NetworkSpec, params: Vec<Tensor<f32>>, moments: Vec<AdamState<f32>>) -> Result<Self> {
        let layout = Layout::new(&spec)?;
        if params.len() != layout.params.len() || moments.len() != params.len() {
            return Err(Error::InvalidSpec(format!(
                "expected {} tensors, got {} weights and {} moment sets",
                layout.params.len(),
                params.len(),
                moments.len()
            )));
        }
        for ((info, p), m) in layout.params.iter().zip(&params).zip(&moments) {
            if p.shape() != info.shape.as_slice() || m.m.len() != p.len() || m.v.len() != p.len() {
                return Err(Error::InvalidSpec(format!("tensor {} has the wrong shape", info.name)));
            }
            if !p.is_finite() {
                return Err(Error::NonFinite("stored weights"));
            }
        }
        Ok(ModelState {
            spec,
            layout,
            params,
            moments,
        })
    }

    pub fn num_weights(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Weights converted to another precision, e.g. `f64` for gradient checks.
    pub fn params_as<T: Real>(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.cast()).collect()
    }

    /// Applies one Adam step to every tensor for which `grads` has an entry.
    /// All gradients are validated before any weight changes.
    pub fn step(&mut self, grads: &[Option<Vec<f32>>], cfg: &AdamConfig) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                op: "model step",
                left: vec![self.params.len()],
                right: vec![grads.len()],
            });
        }
        for (g, p) in grads.iter().zip(&self.params) {
            if let Some(g) = g {
                if g.len() != p.len() {
                    return Err(Error::ShapeMismatch {
                        op: "model step",
                        left: p.shape().to_vec(),
                        right: vec![g.len()],
                    });
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("gradient"));
                }
            }
        }
        for ((g, p), m) in grads.iter().zip(&mut self.params).zip(&mut self.moments) {
            if let Some(g) = g {
                adam_step(p.data_mut(), g, m, cfg)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aligner_heads_start_at_zero() {
        let s = ModelState::new(&NetworkSpec::desk(16), 3).unwrap();
        for block in &s.layout.aligner {
            let last = block.last().unwrap().unwrap();
            assert!(s.params[last.weight].data().iter().all(|&v| v == 0.0));
            assert!(s.params[last.bias].data().iter().all(|&v| v == 0.0));
        }
        let first = s.layout.encoder[0].unwrap();
        let bound = 1.0 / 3.0;
        assert!(s.params[first.weight].data().iter().all(|v| v.abs() <= bound));
        assert!(s.params[first.weight].data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn names_are_unique() {
        let s = ModelState::new(&NetworkSpec::mnist(64), 0).unwrap();
        let mut names: Vec<_> = s.layout.params.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), s.params.len());
    }

    #[test]
    fn from_parts_checks_shapes() {
        let s = ModelState::new(&NetworkSpec::desk(8), 0).unwrap();
        let mut params = s.params.clone();
        params[0] = Tensor::zeros([1]);
        assert!(ModelState::from_parts(s.spec.clone(), params, s.moments.clone()).is_err());
        assert_eq!(
            ModelState::from_parts(s.spec.clone(), s.params.clone(), s.moments.clone()).unwrap(),
            s
        );
    }
}
