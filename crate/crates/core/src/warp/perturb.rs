//! Synthetic perturbation models used to build misaligned stacks with known
//! ground-truth warps.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::homography::{compose, corners_to_homography, Homography, WarpParams};
use super::sampler::{image_dims, sample_into, warp_image};
use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

const MAX_DRAWS: usize = 32;

/// Deterministic per-item generator: stream `index` of the ChaCha8 stream
/// family seeded by `seed`.
pub fn item_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Ranges of the affine model; each is sampled uniformly in `[-r, r]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineRanges {
    pub rotation_deg: f64,
    pub log_scale: f64,
    pub shear: f64,
    /// Translation in pixels; `None` uses the canvas margin.
    pub translation: Option<f64>,
}

impl Default for AffineRanges {
    fn default() -> Self {
        AffineRanges {
            rotation_deg: 20.0,
            log_scale: 1.2f64.ln(),
            shear: 0.2,
            translation: None,
        }
    }
}

impl AffineRanges {
    pub fn zero() -> Self {
        AffineRanges {
            rotation_deg: 0.0,
            log_scale: 0.0,
            shear: 0.0,
            translation: Some(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PerturbModel {
    /// Corner noise of std `sigma * side`, then a shared translation with
    /// the same distribution.
    Perspective {
        sigma: f64,
    },
    Affine {
        ranges: AffineRanges,
        pad_to: usize,
    },
}

/// The two Gaussian stages of one perspective draw, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerspectiveDraw {
    pub corner_noise: [f64; 8],
    pub translation: (f64, f64),
}

impl PerspectiveDraw {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, sigma: f64, width: usize, height: usize) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma must be >= 0, got {sigma}")));
        }
        if sigma == 0.0 {
            return Ok(PerspectiveDraw {
                corner_noise: [0.0; 8],
                translation: (0.0, 0.0),
            });
        }
        let nx = Normal::new(0.0, sigma * width as f64).expect("positive std");
        let ny = Normal::new(0.0, sigma * height as f64).expect("positive std");
        let mut corner_noise = [0.0; 8];
        for (i, v) in corner_noise.iter_mut().enumerate() {
            *v = if i % 2 == 0 { nx.sample(rng) } else { ny.sample(rng) };
        }
        let translation = (nx.sample(rng), ny.sample(rng));
        Ok(PerspectiveDraw {
            corner_noise,
            translation,
        })
    }

    pub fn params(&self) -> WarpParams {
        let mut d = self.corner_noise;
        for pair in d.chunks_mut(2) {
            pair[0] += self.translation.0;
            pair[1] += self.translation.1;
        }
        WarpParams(d)
    }
}

/// Draws a perspective homography for a `width x height` frame, resampling
/// degenerate or folding draws a bounded number of times.
pub fn sample_perspective<R: Rng + ?Sized>(rng: &mut R, sigma: f64, width: usize, height: usize) -> Result<Homography> {
    for _ in 0..MAX_DRAWS {
        let draw = PerspectiveDraw::sample(rng, sigma, width, height)?;
        let Ok(hom) = corners_to_homography(&draw.params(), width, height) else {
            continue;
        };
        if keeps_orientation(&hom, width, height) {
            return Ok(hom);
        }
    }
    Err(Error::DegenerateWarp(format!(
        "no valid perspective draw in {MAX_DRAWS} attempts at sigma {sigma}"
    )))
}

/// Random perspective warp of `image`; returns the warped image and the
/// applied homography.
pub fn perturb_perspective<T: Real, R: Rng + ?Sized>(
    image: &Tensor<T>,
    sigma: f64,
    rng: &mut R,
) -> Result<(Tensor<T>, Homography)> {
    let (_, h, w) = image_dims(image)?;
    let hom = sample_perspective(rng, sigma, w, h)?;
    Ok((warp_image(image, &hom)?, hom))
}

/// Convenience wrapper seeding a fresh generator.
pub fn perturb_perspective_seeded<T: Real>(
    image: &Tensor<T>,
    sigma: f64,
    seed: u64,
) -> Result<(Tensor<T>, Homography)> {
    perturb_perspective(image, sigma, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Rejects warps that fold the frame: every corner must keep a positive
/// projective depth and the quad must keep its orientation.
pub(crate) fn keeps_orientation(h: &Homography, w: usize, hh: usize) -> bool {
    let m = h.matrix();
    let corners = super::homography::canonical_corners(w, hh);
    let depth_ok = corners
        .iter()
        .all(|&(x, y)| m[(2, 0)] * x + m[(2, 1)] * y + m[(2, 2)] > 1e-6);
    let mapped: Vec<(f64, f64)> = corners.iter().map(|&(x, y)| h.apply(x, y)).collect();
    let cross_ok = (0..4).all(|i| {
        let (a, b, c) = (mapped[i], mapped[(i + 1) % 4], mapped[(i + 2) % 4]);
        (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0) > 0.0
    });
    depth_ok && cross_ok
}

/// One sample of the affine model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineDraw {
    pub rotation_deg: f64,
    pub log_scale: f64,
    pub shear: f64,
    pub translation: (f64, f64),
}

impl AffineDraw {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, ranges: &AffineRanges, margin: f64) -> Self {
        let mut sym = |r: f64| {
            if r > 0.0 {
                Uniform::new_inclusive(-r, r).expect("finite range").sample(rng)
            } else {
                0.0
            }
        };
        let rotation_deg = sym(ranges.rotation_deg);
        let log_scale = sym(ranges.log_scale);
        let shear = sym(ranges.shear);
        let t = ranges.translation.unwrap_or(margin);
        let translation = (sym(t), sym(t));
        AffineDraw {
            rotation_deg,
            log_scale,
            shear,
            translation,
        }
    }

    /// Homography taking source pixel coordinates to canvas coordinates:
    /// centre the source in the canvas, then shear, scale, rotate about the
    /// canvas centre, then translate.
    pub fn homography(&self, src_w: usize, src_h: usize, pad_to: usize) -> Result<Homography> {
        let off_x = (pad_to as f64 - src_w as f64) / 2.0;
        let off_y = (pad_to as f64 - src_h as f64) / 2.0;
        let centre = (pad_to as f64 - 1.0) / 2.0;
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let k = self.log_scale.exp();
        let rot = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        let shear = Matrix3::new(1.0, self.shear, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        let scale = Matrix3::new(k, 0.0, 0.0, 0.0, k, 0.0, 0.0, 0.0, 1.0);
        let linear = Homography::from_matrix(rot * scale * shear)?;
        let to_origin = Homography::translation(-centre, -centre);
        let back = Homography::translation(centre + self.translation.0, centre + self.translation.1);
        let embed = Homography::translation(off_x, off_y);
        compose(&back, &compose(&linear, &compose(&to_origin, &embed)?)?)
    }
}

/// Embeds `image` in a `pad_to x pad_to` canvas under `draw`.
pub fn apply_affine<T: Real>(image: &Tensor<T>, draw: &AffineDraw, pad_to: usize) -> Result<(Tensor<T>, Homography)> {
    let (c, h, w) = image_dims(image)?;
    if pad_to < w || pad_to < h {
        return Err(Error::InvalidConfig(format!(
            "canvas {pad_to} smaller than source {w}x{h}"
        )));
    }
    let hom = draw.homography(w, h, pad_to)?;
    let m = *hom.inverse()?.matrix();
    let out = sample_into(image.data(), (c, h, w), &m, (pad_to, pad_to));
    let shape = if image.shape().len() == 4 {
        vec![1, c, pad_to, pad_to]
    } else {
        vec![c, pad_to, pad_to]
    };
    Ok((Tensor::new(shape, out)?, hom))
}

/// affNIST-style perturbation: random affine transform into a larger canvas.
/// Draws that push all content out of the canvas are resampled.
pub fn perturb_affine<T: Real, R: Rng + ?Sized>(
    image: &Tensor<T>,
    ranges: &AffineRanges,
    pad_to: usize,
    rng: &mut R,
) -> Result<(Tensor<T>, Homography)> {
    let (_, h, w) = image_dims(image)?;
    if pad_to < w || pad_to < h {
        return Err(Error::InvalidConfig(format!(
            "canvas {pad_to} smaller than source {w}x{h}"
        )));
    }
    let margin = (pad_to - w.max(h)) as f64 / 2.0;
    let has_content = image.data().iter().any(|v| *v != T::zero());
    for _ in 0..MAX_DRAWS {
        let draw = AffineDraw::sample(rng, ranges, margin);
        let (out, hom) = apply_affine(image, &draw, pad_to)?;
        if has_content && out.data().iter().all(|v| *v == T::zero()) {
            continue;
        }
        return Ok((out, hom));
    }
    Err(Error::DegenerateWarp(
        "affine draws keep pushing content outside the canvas".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(side: usize) -> Tensor<f64> {
        let c = (side as f64 - 1.0) / 2.0;
        Tensor::from_fn([1, side, side], |i| {
            let (x, y) = ((i % side) as f64, (i / side) as f64);
            (-((x - c).powi(2) + (y - c).powi(2)) / 20.0).exp()
        })
    }

    #[test]
    fn zero_sigma_is_identity() {
        let img = blob(28);
        let (out, h) = perturb_perspective_seeded(&img, 0.0, 5).unwrap();
        assert_eq!(h, Homography::identity());
        assert_eq!(out, img);
    }

    #[test]
    fn seeded_draws_are_reproducible() {
        let img = blob(28);
        let a = perturb_perspective_seeded(&img, 0.1, 99).unwrap();
        let b = perturb_perspective_seeded(&img, 0.1, 99).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let ra = perturb_affine(&img, &AffineRanges::default(), 40, &mut item_rng(4, 2)).unwrap();
        let rb = perturb_affine(&img, &AffineRanges::default(), 40, &mut item_rng(4, 2)).unwrap();
        assert_eq!(ra.0, rb.0);
    }

    #[test]
    fn perspective_stage_std_matches_sigma_times_side() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 10_000;
        let (mut s_noise, mut s_trans) = (0.0, 0.0);
        for _ in 0..n {
            let d = PerspectiveDraw::sample(&mut rng, 0.1, 28, 28).unwrap();
            s_noise += d.corner_noise.iter().map(|v| v * v).sum::<f64>() / 8.0;
            s_trans += (d.translation.0.powi(2) + d.translation.1.powi(2)) / 2.0;
        }
        let std_noise = (s_noise / n as f64).sqrt();
        let std_trans = (s_trans / n as f64).sqrt();
        assert!((std_noise - 2.8).abs() / 2.8 < 0.05, "{std_noise}");
        assert!((std_trans - 2.8).abs() / 2.8 < 0.05, "{std_trans}");
    }

    #[test]
    fn zero_ranges_centre_the_source() {
        let img = blob(28);
        let draw = AffineDraw::sample(&mut item_rng(1, 1), &AffineRanges::zero(), 6.0);
        let (out, h) = apply_affine(&img, &draw, 40).unwrap();
        assert_eq!(out.shape(), &[1, 40, 40]);
        let m = h.matrix();
        assert!((m[(0, 2)] - 6.0).abs() < 1e-12 && (m[(1, 2)] - 6.0).abs() < 1e-12);
        for y in 0..28 {
            for x in 0..28 {
                let a = out.data()[(y + 6) * 40 + x + 6];
                assert!((a - img.data()[y * 28 + x]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quarter_turn_matches_exact_rotation() {
        // asymmetric L shape
        let side = 12;
        let mut img = Tensor::<f64>::zeros([1, side, side]);
        for y in 2..10 {
            img.data_mut()[y * side + 3] = 1.0;
        }
        for x in 3..8 {
            img.data_mut()[9 * side + x] = 0.5;
        }
        let draw = AffineDraw {
            rotation_deg: 90.0,
            log_scale: 0.0,
            shear: 0.0,
            translation: (0.0, 0.0),
        };
        let (out, _) = apply_affine(&img, &draw, side).unwrap();
        // output (x, y) reads the source at R^-1 (x - c, y - c) + c = (y, side - 1 - x)
        for y in 0..side {
            for x in 0..side {
                let (ux, uy) = (y, side - 1 - x);
                let expect = img.data()[uy * side + ux];
                let got = out.data()[y * side + x];
                assert!((got - expect).abs() < 1e-9, "({x},{y}) {got} vs {expect}");
            }
        }
    }
}
