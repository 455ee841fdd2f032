//! Image stacks and the sources training reads from.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::warp::{
    apply_affine, item_rng, perturb_affine, sample_perspective, warp_image, AffineDraw, Homography, PerturbModel,
};

/// Random access to a set of equally sized images with values in `[0, 1]`.
pub trait ImageSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(channels, height, width)` of every image.
    fn dims(&self) -> (usize, usize, usize);

    /// Writes image `index` into `out`, which holds `c * h * w` values.
    fn load(&self, index: usize, out: &mut [f32]) -> Result<()>;

    /// Stacks the given images into an `N x C x H x W` tensor.
    fn batch(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let (c, h, w) = self.dims();
        let per = c * h * w;
        if indices.is_empty() {
            return Err(Error::EmptyStack);
        }
        let mut data = vec![0.0f32; indices.len() * per];
        for (&i, chunk) in indices.iter().zip(data.chunks_mut(per)) {
            if i >= self.len() {
                return Err(Error::InvalidConfig(format!(
                    "image index {i} out of range for {} images",
                    self.len()
                )));
            }
            self.load(i, chunk)?;
        }
        Tensor::new([indices.len(), c, h, w], data)
    }
}

/// In-memory `N x C x H x W` stack.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    pub n: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ImageStack {
    pub fn new(n: usize, channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyStack);
        }
        if data.len() != n * channels * height * width || channels * height * width == 0 {
            return Err(Error::InvalidShape {
                shape: vec![n, channels, height, width],
                reason: format!("stack holds {} values", data.len()),
            });
        }
        Ok(ImageStack {
            n,
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_tensor(t: Tensor<f32>) -> Result<Self> {
        let (n, c, h, w) = t.dims4()?;
        Self::new(n, c, h, w, t.into_data())
    }

    pub fn from_source(src: &dyn ImageSource) -> Result<Self> {
        let indices: Vec<usize> = (0..src.len()).collect();
        Self::from_tensor(src.batch(&indices)?)
    }

    pub fn per_image(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let p = self.per_image();
        &self.data[i * p..(i + 1) * p]
    }

    pub fn images(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks(self.per_image())
    }

    /// Keeps the images at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.per_image());
        for &i in indices {
            if i >= self.n {
                return Err(Error::InvalidConfig(format!("image index {i} out of range")));
            }
            data.extend_from_slice(self.image(i));
        }
        Self::new(indices.len(), self.channels, self.height, self.width, data)
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new([self.n, self.channels, self.height, self.width], self.data.clone())
            .expect("validated at construction")
    }
}

impl ImageSource for ImageStack {
    fn len(&self) -> usize {
        self.n
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    fn load(&self, index: usize, out: &mut [f32]) -> Result<()> {
        out.copy_from_slice(self.image(index));
        Ok(())
    }
}

/// Perturbed copies of one template, generated on demand so memory does not
/// grow with the number of images. Image 0 is the unperturbed template (or
/// its centred embedding for the affine model); image `i > 0` uses the
/// generator stream `i` of `seed`.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    template: Tensor<f32>,
    model: PerturbModel,
    seed: u64,
    n: usize,
}

impl SyntheticSource {
    pub fn new(template: Tensor<f32>, model: PerturbModel, seed: u64, n: usize) -> Result<Self> {
        let template = match *template.shape() {
            [c, h, w] => template.reshape([1, c, h, w])?,
            [1, _, _, _] => template,
            _ => {
                return Err(Error::InvalidShape {
                    shape: template.shape().to_vec(),
                    reason: "template must be a single C x H x W image".into(),
                })
            }
        };
        if n == 0 {
            return Err(Error::EmptyStack);
        }
        if let PerturbModel::Perspective { sigma } = model {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(Error::InvalidConfig(format!("sigma must be >= 0, got {sigma}")));
            }
        }
        Ok(SyntheticSource {
            template,
            model,
            seed,
            n,
        })
    }

    pub fn template(&self) -> &Tensor<f32> {
        &self.template
    }

    /// Image `index` and the homography that produced it from the template
    /// (in output coordinates for the affine model).
    pub fn generate(&self, index: usize) -> Result<(Tensor<f32>, Homography)> {
        let (_, _, h, w) = self.template.dims4()?;
        let mut rng = item_rng(self.seed, index as u64);
        match self.model {
            PerturbModel::Perspective { sigma } => {
                let hom = if index == 0 {
                    Homography::identity()
                } else {
                    sample_perspective(&mut rng, sigma, w, h)?
                };
                Ok((warp_image(&self.template, &hom)?, hom))
            }
            PerturbModel::Affine { ranges, pad_to } => {
                if index == 0 {
                    let centre = AffineDraw {
                        rotation_deg: 0.0,
                        log_scale: 0.0,
                        shear: 0.0,
                        translation: (0.0, 0.0),
                    };
                    apply_affine(&self.template, &centre, pad_to)
                } else {
                    perturb_affine(&self.template, &ranges, pad_to, &mut rng)
                }
            }
        }
    }

    /// Warp taking the clean image 0 onto image `index`.
    pub fn truth(&self, index: usize) -> Result<Homography> {
        match self.model {
            PerturbModel::Perspective { sigma } => {
                if index == 0 {
                    return Ok(Homography::identity());
                }
                let (_, _, h, w) = self.template.dims4()?;
                sample_perspective(&mut item_rng(self.seed, index as u64), sigma, w, h)
            }
            PerturbModel::Affine { .. } => {
                let (_, own) = self.generate(index)?;
                let (_, base) = self.generate(0)?;
                crate::warp::compose(&own, &base.inverse()?)
            }
        }
    }
}

impl ImageSource for SyntheticSource {
    fn len(&self) -> usize {
        self.n
    }

    fn dims(&self) -> (usize, usize, usize) {
        let (_, c, h, w) = self.template.dims4().expect("checked at construction");
        match self.model {
            PerturbModel::Perspective { .. } => (c, h, w),
            PerturbModel::Affine { pad_to, .. } => (c, pad_to, pad_to),
        }
    }

    fn load(&self, index: usize, out: &mut [f32]) -> Result<()> {
        let (img, _) = self.generate(index)?;
        out.copy_from_slice(img.data());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn template() -> Tensor<f32> {
        Tensor::from_fn([1, 1, 12, 12], |i| if (i / 12 + i % 12) % 5 == 0 { 1.0 } else { 0.0 })
    }

    #[test]
    fn first_synthetic_image_is_the_template() {
        let src = SyntheticSource::new(template(), PerturbModel::Perspective { sigma: 0.1 }, 4, 10).unwrap();
        let mut buf = vec![0.0; 144];
        src.load(0, &mut buf).unwrap();
        assert_eq!(buf, template().data());
        assert_eq!(src.truth(0).unwrap(), Homography::identity());
    }

    #[test]
    fn synthetic_items_are_reproducible_and_distinct() {
        let src = SyntheticSource::new(template(), PerturbModel::Perspective { sigma: 0.1 }, 4, 10).unwrap();
        let a = src.batch(&[3, 5]).unwrap();
        let b = src.batch(&[3, 5]).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.item(0), a.item(1));
        let (_, h) = src.generate(3).unwrap();
        assert_eq!(src.truth(3).unwrap(), h);
    }

    #[test]
    fn stack_select_and_bounds() {
        let s = ImageStack::new(3, 1, 2, 2, (0..12).map(|v| v as f32).collect()).unwrap();
        assert_eq!(
            s.select(&[2, 0]).unwrap().data,
            vec![8.0, 9.0, 10.0, 11.0, 0.0, 1.0, 2.0, 3.0]
        );
        assert!(s.batch(&[3]).is_err());
        assert!(ImageStack::new(0, 1, 2, 2, vec![]).is_err());
    }
}
