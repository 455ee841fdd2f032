//! Least-squares congealing baseline: every image is aligned to the
//! reference on its own by damped forward-additive Gauss-Newton over the
//! eight corner displacements.

use std::time::Instant;

use nalgebra::{Matrix3, SMatrix, SVector};

use crate::autodiff::Tensor;
use crate::congeal::{mean_area_ratio, RunReport};
use crate::dataset::ImageSource;
use crate::error::{Error, Result};
use crate::metrics::{apsnr, StackStats};
use crate::warp::{corners_to_homography, inverse_with_jacobian, Homography, WarpParams};

const DAMPING_CAP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct LscConfig {
    pub max_iters: usize,
    /// Initial Levenberg damping.
    pub damping: f64,
    /// Stop once the update norm (px) falls below this.
    pub threshold: f64,
    /// 1 solves at full resolution only; 2 starts on a 2x downsampled copy.
    pub pyramid: usize,
}

impl Default for LscConfig {
    fn default() -> Self {
        LscConfig {
            max_iters: 100,
            damping: 1e-3,
            threshold: 1e-3,
            pyramid: 1,
        }
    }
}

impl LscConfig {
    /// Defaults with the pyramid switched on for starts of 20% or more.
    pub fn for_sigma(sigma: f64) -> Self {
        LscConfig {
            pyramid: if sigma >= 0.2 { 2 } else { 1 },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "damping must be >= 0, got {}",
                self.damping
            )));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "threshold must be > 0, got {}",
                self.threshold
            )));
        }
        if !(1..=2).contains(&self.pyramid) {
            return Err(Error::InvalidConfig(format!(
                "pyramid must be 1 or 2, got {}",
                self.pyramid
            )));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("max-iters", self.max_iters.to_string()),
            ("damping", self.damping.to_string()),
            ("threshold", self.threshold.to_string()),
            ("pyramid", self.pyramid.to_string()),
        ]
    }
}

/// Outcome for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct LscFit {
    pub params: WarpParams,
    /// Squared error at the start and after every accepted step.
    pub history: Vec<f64>,
    /// Update norm of each iteration, accepted or not.
    pub updates: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct LscResult {
    pub fits: Vec<LscFit>,
    pub aligned: Tensor<f32>,
}

impl LscResult {
    pub fn params(&self) -> Vec<WarpParams> {
        self.fits.iter().map(|f| f.params).collect()
    }
}

/// Planar f64 image with zero reads outside the frame.
#[derive(Debug, Clone)]
struct Plane {
    c: usize,
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    fn new(c: usize, h: usize, w: usize, v: Vec<f64>) -> Self {
        Plane { c, h, w, v }
    }

    #[inline]
    fn at(&self, ch: usize, x: i64, y: i64) -> f64 {
        if x < 0 || y < 0 || x >= self.w as i64 || y >= self.h as i64 {
            0.0
        } else {
            self.v[(ch * self.h + y as usize) * self.w + x as usize]
        }
    }

    fn bilinear(&self, ch: usize, u: f64, v: f64) -> f64 {
        let (x0, y0) = (u.floor(), v.floor());
        let (fx, fy) = (u - x0, v - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        self.at(ch, x0, y0) * (1.0 - fx) * (1.0 - fy)
            + self.at(ch, x0 + 1, y0) * fx * (1.0 - fy)
            + self.at(ch, x0, y0 + 1) * (1.0 - fx) * fy
            + self.at(ch, x0 + 1, y0 + 1) * fx * fy
    }

    /// Central differences, one-sided reads of zero beyond the border.
    fn gradients(&self) -> (Plane, Plane) {
        let mut gx = vec![0.0; self.v.len()];
        let mut gy = vec![0.0; self.v.len()];
        for ch in 0..self.c {
            for y in 0..self.h as i64 {
                for x in 0..self.w as i64 {
                    let i = (ch * self.h + y as usize) * self.w + x as usize;
                    gx[i] = 0.5 * (self.at(ch, x + 1, y) - self.at(ch, x - 1, y));
                    gy[i] = 0.5 * (self.at(ch, x, y + 1) - self.at(ch, x, y - 1));
                }
            }
        }
        (
            Plane::new(self.c, self.h, self.w, gx),
            Plane::new(self.c, self.h, self.w, gy),
        )
    }

    /// 2x2 box downsample.
    fn half(&self) -> Plane {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut v = vec![0.0; self.c * h * w];
        for ch in 0..self.c {
            for y in 0..h {
                for x in 0..w {
                    let (sx, sy) = (2 * x as i64, 2 * y as i64);
                    v[(ch * h + y) * w + x] = 0.25
                        * (self.at(ch, sx, sy)
                            + self.at(ch, sx + 1, sy)
                            + self.at(ch, sx, sy + 1)
                            + self.at(ch, sx + 1, sy + 1));
                }
            }
        }
        Plane::new(self.c, h, w, v)
    }

    /// Squared error to `reference` of this image warped by `d`.
    fn error(&self, reference: &Plane, d: &WarpParams) -> Option<f64> {
        let m = inverse_with_jacobian(d, self.w, self.h).ok()?.inverse;
        let mut e = 0.0;
        for y in 0..self.h {
            for x in 0..self.w {
                let (u, v) = project(&m, x as f64, y as f64)?;
                for ch in 0..self.c {
                    let r = self.bilinear(ch, u, v) - reference.at(ch, x as i64, y as i64);
                    e += r * r;
                }
            }
        }
        e.is_finite().then_some(e)
    }
}

#[inline]
fn project(m: &Matrix3<f64>, x: f64, y: f64) -> Option<(f64, f64)> {
    let c = m[(2, 0)] * x + m[(2, 1)] * y + m[(2, 2)];
    if c <= 1e-9 {
        return None;
    }
    let u = (m[(0, 0)] * x + m[(0, 1)] * y + m[(0, 2)]) / c;
    let v = (m[(1, 0)] * x + m[(1, 1)] * y + m[(1, 2)]) / c;
    (u.is_finite() && v.is_finite()).then_some((u, v))
}

type Normal = (SMatrix<f64, 8, 8>, SVector<f64, 8>, f64);

/// `J^T J`, `J^T r` and the squared error at `d`.
fn normal_equations(image: &Plane, grads: &(Plane, Plane), reference: &Plane, d: &WarpParams) -> Option<Normal> {
    let jac = inverse_with_jacobian(d, image.w, image.h).ok()?;
    let m = jac.inverse;
    let mut jtj = SMatrix::<f64, 8, 8>::zeros();
    let mut jtr = SVector::<f64, 8>::zeros();
    let mut err = 0.0;
    for y in 0..image.h {
        for x in 0..image.w {
            let (xf, yf) = (x as f64, y as f64);
            let den = m[(2, 0)] * xf + m[(2, 1)] * yf + m[(2, 2)];
            let (u, v) = project(&m, xf, yf)?;
            let mut du = [0.0; 8];
            let mut dv = [0.0; 8];
            for k in 0..8 {
                let dm = &jac.d_inverse[k];
                let da = dm[(0, 0)] * xf + dm[(0, 1)] * yf + dm[(0, 2)];
                let db = dm[(1, 0)] * xf + dm[(1, 1)] * yf + dm[(1, 2)];
                let dc = dm[(2, 0)] * xf + dm[(2, 1)] * yf + dm[(2, 2)];
                du[k] = (da - u * dc) / den;
                dv[k] = (db - v * dc) / den;
            }
            for ch in 0..image.c {
                let r = image.bilinear(ch, u, v) - reference.at(ch, x as i64, y as i64);
                let (gx, gy) = (grads.0.bilinear(ch, u, v), grads.1.bilinear(ch, u, v));
                let j = SVector::<f64, 8>::from_fn(|k, _| gx * du[k] + gy * dv[k]);
                jtj += j * j.transpose();
                jtr += j * r;
                err += r * r;
            }
        }
    }
    err.is_finite().then_some((jtj, jtr, err))
}

fn solve_level(image: &Plane, reference: &Plane, start: WarpParams, cfg: &LscConfig, fit: &mut LscFit) -> WarpParams {
    let grads = image.gradients();
    let mut d = start;
    let mut damping = cfg.damping;
    let Some((mut jtj, mut jtr, mut err)) = normal_equations(image, &grads, reference, &d) else {
        fit.converged = false;
        return d;
    };
    fit.history.push(err);
    fit.converged = false;
    for _ in 0..cfg.max_iters {
        let a = jtj + SMatrix::<f64, 8, 8>::identity() * damping;
        let step = a.cholesky().map(|c| -c.solve(&jtr));
        let Some(step) = step.filter(|s| s.iter().all(|v| v.is_finite())) else {
            damping = if damping > 0.0 { damping * 10.0 } else { 1e-6 };
            if damping > DAMPING_CAP {
                break;
            }
            continue;
        };
        let norm = step.norm();
        fit.updates.push(norm);
        if norm < cfg.threshold {
            fit.converged = true;
            break;
        }
        let trial = WarpParams(std::array::from_fn(|k| d.0[k] + step[k]));
        match normal_equations(image, &grads, reference, &trial) {
            Some((tj, tr, te)) if te < err => {
                d = trial;
                (jtj, jtr, err) = (tj, tr, te);
                fit.history.push(err);
                damping = (damping / 10.0).max(cfg.damping * 1e-6);
            }
            _ => {
                damping = if damping > 0.0 { damping * 10.0 } else { 1e-6 };
                if damping > DAMPING_CAP {
                    break;
                }
            }
        }
    }
    d
}

/// Fine-to-coarse coordinate map of a 2x box downsample.
fn half_map() -> Matrix3<f64> {
    Matrix3::new(0.5, 0.0, -0.25, 0.0, 0.5, -0.25, 0.0, 0.0, 1.0)
}

fn rescale(d: &WarpParams, from: (usize, usize), to: (usize, usize), s: &Matrix3<f64>) -> Result<WarpParams> {
    let h = corners_to_homography(d, from.0, from.1)?;
    let s_inv = s.try_inverse().expect("scaling is invertible");
    let h = Homography::from_matrix(s * h.matrix() * s_inv)?;
    Ok(WarpParams::from_homography(&h, to.0, to.1))
}

fn fit_one(image: &Plane, reference: &Plane, cfg: &LscConfig) -> LscFit {
    let mut fit = LscFit {
        params: WarpParams::identity(),
        history: Vec::new(),
        updates: Vec::new(),
        converged: false,
    };
    let mut start = WarpParams::identity();
    if cfg.pyramid == 2 && image.w >= 8 && image.h >= 8 {
        let (ci, cr) = (image.half(), reference.half());
        let mut coarse = fit.clone();
        let dc = solve_level(&ci, &cr, start, cfg, &mut coarse);
        let s = half_map();
        let s_inv = s.try_inverse().expect("scaling is invertible");
        if let Ok(up) = rescale(&dc, (ci.w, ci.h), (image.w, image.h), &s_inv) {
            if image.error(reference, &up) < image.error(reference, &start) {
                start = up;
            }
        }
    }
    fit.params = solve_level(image, reference, start, cfg, &mut fit);
    fit
}

fn worker_count(jobs: usize) -> usize {
    let cap = std::env::var("CONGEAL_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    cap.min(jobs).max(1)
}

/// Aligns each image of an `N x C x H x W` batch to `reference`. Images are
/// solved independently, in parallel up to `CONGEAL_THREADS` workers.
pub fn lsc_align(images: &Tensor<f32>, reference: &Tensor<f32>, cfg: &LscConfig) -> Result<LscResult> {
    cfg.validate()?;
    let (n, c, h, w) = images.dims4()?;
    if reference.len() != c * h * w {
        return Err(Error::ShapeMismatch {
            op: "lsc_align",
            left: images.shape().to_vec(),
            right: reference.shape().to_vec(),
        });
    }
    let to_plane = |v: &[f32]| Plane::new(c, h, w, v.iter().map(|&x| x as f64).collect());
    let refp = to_plane(reference.data());
    let per = c * h * w;
    let workers = worker_count(n);
    let mut fits: Vec<Option<LscFit>> = vec![None; n];
    let chunk = n.div_ceil(workers);
    std::thread::scope(|scope| {
        for (k, out) in fits.chunks_mut(chunk).enumerate() {
            let start = k * chunk;
            let refp = &refp;
            let data = images.data();
            scope.spawn(move || {
                for (j, cell) in out.iter_mut().enumerate() {
                    let i = start + j;
                    *cell = Some(fit_one(&to_plane(&data[i * per..(i + 1) * per]), refp, cfg));
                }
            });
        }
    });
    let fits: Vec<LscFit> = fits.into_iter().map(|f| f.expect("every image is solved")).collect();
    let mut aligned = Vec::with_capacity(n * per);
    for (i, f) in fits.iter().enumerate() {
        let m = inverse_with_jacobian(&f.params, w, h)?.inverse;
        aligned.extend(crate::warp::sampler::sample_into(
            &images.data()[i * per..(i + 1) * per],
            (c, h, w),
            &m,
            (h, w),
        ));
    }
    Ok(LscResult {
        fits,
        aligned: Tensor::new([n, c, h, w], aligned)?,
    })
}

/// Runs the baseline over a whole source against image `reference_index`
/// and summarises it in the same report format as congealing.
pub fn lsc_run(
    source: &dyn ImageSource,
    reference_index: usize,
    cfg: &LscConfig,
    batch: usize,
) -> Result<(RunReport, Vec<LscFit>)> {
    let started = Instant::now();
    cfg.validate()?;
    let n = source.len();
    if n == 0 {
        return Err(Error::EmptyStack);
    }
    if reference_index >= n {
        return Err(Error::InvalidConfig(format!(
            "reference index {reference_index} out of range for {n} images"
        )));
    }
    let dims = source.dims();
    let reference = source.batch(&[reference_index])?;
    let mut before = StackStats::new(dims);
    let mut after = StackStats::new(dims);
    let mut fits = Vec::with_capacity(n);
    let all: Vec<usize> = (0..n).collect();
    for chunk in all.chunks(batch.max(1)) {
        let images = source.batch(chunk)?;
        let per = reference.len();
        for k in 0..chunk.len() {
            before.push(&images.data()[k * per..(k + 1) * per])?;
        }
        let res = lsc_align(&images, &reference, cfg)?;
        for (k, (&i, mut fit)) in chunk.iter().zip(res.fits).enumerate() {
            if i == reference_index {
                after.push(reference.data())?;
                fit = LscFit {
                    params: WarpParams::identity(),
                    history: Vec::new(),
                    updates: Vec::new(),
                    converged: true,
                };
            } else {
                after.push(&res.aligned.data()[k * per..(k + 1) * per])?;
            }
            fits.push(fit);
        }
    }
    let params: Vec<WarpParams> = fits.iter().map(|f| f.params).collect();
    let mut config: Vec<(String, String)> = cfg.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    config.push(("reference-index".into(), reference_index.to_string()));
    let report = RunReport {
        method: "lsc".into(),
        config,
        n,
        dims,
        epochs: Vec::new(),
        apsnr_before: apsnr(&before)?,
        apsnr_after: apsnr(&after)?,
        before,
        after,
        mean_area_ratio: mean_area_ratio(&params, reference_index, dims.2, dims.1)?,
        params,
        flagged: fits.iter().filter(|f| !f.converged).count(),
        stopped_early: false,
        images: Vec::new(),
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    Ok((report, fits))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_is_validated() {
        assert!(LscConfig::default().validate().is_ok());
        assert!(LscConfig {
            damping: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(LscConfig {
            threshold: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert_eq!(LscConfig::for_sigma(0.2).pyramid, 2);
        assert_eq!(LscConfig::for_sigma(0.1).pyramid, 1);
    }

    #[test]
    fn half_map_sends_pixel_pairs_to_their_centre() {
        let s = half_map();
        let p = s * nalgebra::Vector3::new(2.5, 4.5, 1.0);
        assert_eq!((p[0], p[1]), (1.0, 2.0));
    }
}
