//! Layer-by-layer architecture descriptions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Tanh,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum LayerKind {
    /// `kernel x kernel` convolution with `channels` outputs. Stride 1 uses
    /// same padding; stride 2 pads so that the output is `ceil(input / 2)`.
    Conv {
        kernel: usize,
        channels: usize,
        stride: usize,
    },
    /// Fully connected; spatial inputs are flattened first.
    Linear { out: usize },
    /// Nearest-neighbour 2x upsampling.
    Upsample,
    /// Reinterprets a flat vector as a `channels x height x width` map.
    Reshape {
        channels: usize,
        height: usize,
        width: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn conv(kernel: usize, channels: usize, stride: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv {
                kernel,
                channels,
                stride,
            },
            activation: Activation::Tanh,
        }
    }

    pub fn linear(out: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Linear { out },
            activation: Activation::Tanh,
        }
    }

    pub fn upsample() -> Self {
        LayerSpec {
            kind: LayerKind::Upsample,
            activation: Activation::None,
        }
    }

    pub fn reshape(channels: usize, height: usize, width: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Reshape {
                channels,
                height,
                width,
            },
            activation: Activation::None,
        }
    }

    pub fn with(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn has_params(&self) -> bool {
        matches!(self.kind, LayerKind::Conv { .. } | LayerKind::Linear { .. })
    }
}

/// Shape of one item flowing through a stack of layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Map { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Shape {
    pub fn numel(&self) -> usize {
        match *self {
            Shape::Map { c, h, w } => c * h * w,
            Shape::Flat(n) => n,
        }
    }
}

/// Weight shape and bias length of a layer that has parameters.
type ParamShapes = Option<(Vec<usize>, usize)>;

/// Parameter shapes of one layer given its input, plus its output shape.
pub(crate) fn layer_shapes(layer: &LayerSpec, input: Shape) -> Result<(ParamShapes, Shape)> {
    let bad = |reason: String| Error::InvalidSpec(format!("{:?} on {input:?}: {reason}", layer.kind));
    match (layer.kind, input) {
        (
            LayerKind::Conv {
                kernel,
                channels,
                stride,
            },
            Shape::Map { c, h, w },
        ) => {
            if kernel == 0 || kernel % 2 == 0 {
                return Err(bad("kernel must be odd".into()));
            }
            if stride != 1 && stride != 2 {
                return Err(bad("stride must be 1 or 2".into()));
            }
            if channels == 0 {
                return Err(bad("no output channels".into()));
            }
            let out = Shape::Map {
                c: channels,
                h: h.div_ceil(stride),
                w: w.div_ceil(stride),
            };
            Ok((Some((vec![channels, c, kernel, kernel], channels)), out))
        }
        (LayerKind::Conv { .. }, Shape::Flat(_)) => Err(bad("convolution needs a spatial input".into())),
        (LayerKind::Linear { out }, s) => {
            if out == 0 {
                return Err(bad("no outputs".into()));
            }
            Ok((Some((vec![out, s.numel()], out)), Shape::Flat(out)))
        }
        (LayerKind::Upsample, Shape::Map { c, h, w }) => Ok((None, Shape::Map { c, h: 2 * h, w: 2 * w })),
        (LayerKind::Upsample, Shape::Flat(_)) => Err(bad("upsampling needs a spatial input".into())),
        (
            LayerKind::Reshape {
                channels,
                height,
                width,
            },
            s,
        ) => {
            let to = Shape::Map {
                c: channels,
                h: height,
                w: width,
            };
            if to.numel() != s.numel() || to.numel() == 0 {
                return Err(bad(format!("cannot reshape {} values", s.numel())));
            }
            Ok((None, to))
        }
    }
}

pub(crate) fn output_shape(layers: &[LayerSpec], input: Shape) -> Result<Shape> {
    layers.iter().try_fold(input, |s, l| layer_shapes(l, s).map(|(_, o)| o))
}

/// Architecture of the aligner and the autoencoder for one image size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Layers of one aligner block; every block shares this layout (not the
    /// weights). The last layer must have 8 outputs.
    pub aligner: Vec<LayerSpec>,
    pub aligner_blocks: usize,
    /// Per-block residual clamp as a fraction of the image side.
    pub trust_radius: f64,
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// MNIST widths: four `conv7-4 | conv7-8 | 8-output` aligner blocks,
    /// three stride-2 `conv3-100`, two 1x1 width-1024 stages and a sigmoid
    /// code head in the encoder; the decoder projects the code to a 7x7x16
    /// map and upsamples twice through `conv3-100` to a single channel.
    pub fn mnist(code_size: usize) -> Self {
        NetworkSpec {
            channels: 1,
            height: 28,
            width: 28,
            aligner: vec![
                LayerSpec::conv(7, 4, 1),
                LayerSpec::conv(7, 8, 1),
                LayerSpec::linear(8).with(Activation::None),
            ],
            aligner_blocks: 4,
            trust_radius: 0.25,
            encoder: vec![
                LayerSpec::conv(3, 100, 2),
                LayerSpec::conv(3, 100, 2),
                LayerSpec::conv(3, 100, 2),
                LayerSpec::conv(1, 1024, 1),
                LayerSpec::conv(1, 1024, 1),
                LayerSpec::linear(code_size).with(Activation::Sigmoid),
            ],
            decoder: vec![
                LayerSpec::linear(7 * 7 * 16),
                LayerSpec::reshape(16, 7, 7),
                LayerSpec::upsample(),
                LayerSpec::conv(3, 100, 1),
                LayerSpec::upsample(),
                LayerSpec::conv(3, 100, 1),
                LayerSpec::conv(1, 1, 1).with(Activation::None),
            ],
        }
    }

    /// Same topology as [`NetworkSpec::mnist`] with narrower layers and
    /// strided aligner convolutions, sized for single-core runs.
    pub fn desk(code_size: usize) -> Self {
        NetworkSpec {
            channels: 1,
            height: 28,
            width: 28,
            aligner: vec![
                LayerSpec::conv(7, 4, 2),
                LayerSpec::conv(7, 8, 2),
                LayerSpec::linear(8).with(Activation::None),
            ],
            aligner_blocks: 4,
            trust_radius: 0.25,
            encoder: vec![
                LayerSpec::conv(3, 16, 2),
                LayerSpec::conv(3, 32, 2),
                LayerSpec::conv(3, 32, 2),
                LayerSpec::conv(1, 128, 1),
                LayerSpec::conv(1, 128, 1),
                LayerSpec::linear(code_size).with(Activation::Sigmoid),
            ],
            decoder: vec![
                LayerSpec::linear(7 * 7 * 16),
                LayerSpec::reshape(16, 7, 7),
                LayerSpec::upsample(),
                LayerSpec::conv(3, 16, 1),
                LayerSpec::upsample(),
                LayerSpec::conv(3, 16, 1),
                LayerSpec::conv(1, 1, 1).with(Activation::None),
            ],
        }
    }

    pub fn by_name(name: &str, code_size: usize) -> Result<Self> {
        match name {
            "mnist" => Ok(Self::mnist(code_size)),
            "desk" => Ok(Self::desk(code_size)),
            other => Err(Error::InvalidSpec(format!("unknown network preset {other:?}"))),
        }
    }

    pub fn image_shape(&self) -> Shape {
        Shape::Map {
            c: self.channels,
            h: self.height,
            w: self.width,
        }
    }

    pub fn code_size(&self) -> usize {
        match self.encoder.last().map(|l| l.kind) {
            Some(LayerKind::Linear { out }) => out,
            Some(LayerKind::Conv { channels, .. }) => channels,
            _ => 0,
        }
    }

    /// Side length used for the trust radius and the perturbation scale.
    pub fn side(&self) -> f64 {
        self.width.max(self.height) as f64
    }

    /// Checks that every stack composes and ends where it must.
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.height < 2 || self.width < 2 {
            return Err(Error::InvalidSpec("image must be at least 1x2x2".into()));
        }
        if self.aligner_blocks == 0 {
            return Err(Error::InvalidSpec("aligner needs at least one block".into()));
        }
        if !(self.trust_radius > 0.0 && self.trust_radius.is_finite()) {
            return Err(Error::InvalidSpec("trust radius must be positive".into()));
        }
        let aligner_in = Shape::Map {
            c: 2 * self.channels,
            h: self.height,
            w: self.width,
        };
        match output_shape(&self.aligner, aligner_in)? {
            Shape::Flat(8) => {}
            s => {
                return Err(Error::InvalidSpec(format!(
                    "aligner block ends in {s:?}, expected 8 outputs"
                )))
            }
        }
        if !self.aligner.last().is_some_and(|l| l.has_params()) {
            return Err(Error::InvalidSpec("aligner block must end in a learnable layer".into()));
        }
        let code = output_shape(&self.encoder, self.image_shape())?;
        if !matches!(code, Shape::Flat(_)) {
            return Err(Error::InvalidSpec(format!(
                "encoder ends in {code:?}, expected a code vector"
            )));
        }
        if self.encoder.last().map(|l| l.activation) != Some(Activation::Sigmoid) {
            return Err(Error::InvalidSpec("encoder must end with a sigmoid".into()));
        }
        let image = output_shape(&self.decoder, code)?;
        if image != self.image_shape() {
            return Err(Error::InvalidSpec(format!(
                "decoder produces {image:?}, expected {:?}",
                self.image_shape()
            )));
        }
        Ok(())
    }
}
