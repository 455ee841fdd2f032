//! Bilinear inverse-warping sampler with gradients for both the image and
//! the corner displacements. Samples outside the frame read as zero.

use nalgebra::Matrix3;

use super::homography::{inverse_with_jacobian, Homography, WarpParams};
use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

/// Per-image state saved by the forward pass for the backward rule.
#[derive(Debug, Clone)]
pub struct WarpCache {
    inverse: Matrix3<f64>,
    d_inverse: [Matrix3<f64>; 8],
}

const MIN_DEPTH: f64 = 1e-9;

#[inline]
fn source_coords(m: &Matrix3<f64>, x: f64, y: f64) -> Option<(f64, f64, f64)> {
    let a = m[(0, 0)] * x + m[(0, 1)] * y + m[(0, 2)];
    let b = m[(1, 0)] * x + m[(1, 1)] * y + m[(1, 2)];
    let c = m[(2, 0)] * x + m[(2, 1)] * y + m[(2, 2)];
    (c > MIN_DEPTH).then(|| (a / c, b / c, c))
}

#[inline]
fn fetch<T: Real>(plane: &[T], w: usize, h: usize, x: i64, y: i64) -> T {
    if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
        T::zero()
    } else {
        plane[y as usize * w + x as usize]
    }
}

/// Samples `src` (`channels x src_h x src_w`) at `m * (x, y, 1)` for every
/// pixel of an `out_h x out_w` grid.
pub fn sample_into<T: Real>(
    src: &[T],
    (channels, src_h, src_w): (usize, usize, usize),
    m: &Matrix3<f64>,
    (out_h, out_w): (usize, usize),
) -> Vec<T> {
    let mut out = vec![T::zero(); channels * out_h * out_w];
    for y in 0..out_h {
        for x in 0..out_w {
            let Some((u, v, _)) = source_coords(m, x as f64, y as f64) else {
                continue;
            };
            if !(u.is_finite() && v.is_finite()) {
                continue;
            }
            let (x0, y0) = (u.floor(), v.floor());
            let (fx, fy) = (u - x0, v - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let w00 = T::from_f64c((1.0 - fx) * (1.0 - fy));
            let w10 = T::from_f64c(fx * (1.0 - fy));
            let w01 = T::from_f64c((1.0 - fx) * fy);
            let w11 = T::from_f64c(fx * fy);
            for c in 0..channels {
                let plane = &src[c * src_h * src_w..(c + 1) * src_h * src_w];
                let mut acc = fetch(plane, src_w, src_h, x0, y0) * w00;
                if fx != 0.0 {
                    acc += fetch(plane, src_w, src_h, x0 + 1, y0) * w10;
                }
                if fy != 0.0 {
                    acc += fetch(plane, src_w, src_h, x0, y0 + 1) * w01;
                    if fx != 0.0 {
                        acc += fetch(plane, src_w, src_h, x0 + 1, y0 + 1) * w11;
                    }
                }
                out[c * out_h * out_w + y * out_w + x] = acc;
            }
        }
    }
    out
}

/// Warps a `C x H x W` (or `1 x C x H x W`) image by `h`: the output at `y`
/// is the image sampled at `h^-1 y`.
pub fn warp_image<T: Real>(image: &Tensor<T>, h: &Homography) -> Result<Tensor<T>> {
    let (c, hh, w) = image_dims(image)?;
    let m = if *h == Homography::identity() {
        Matrix3::identity()
    } else {
        *h.inverse()?.matrix()
    };
    let out = sample_into(image.data(), (c, hh, w), &m, (hh, w));
    Tensor::new(image.shape().to_vec(), out)
}

pub(crate) fn image_dims<T: Real>(image: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [c, h, w] | [1, c, h, w] => Ok((c, h, w)),
        _ => Err(Error::InvalidShape {
            shape: image.shape().to_vec(),
            reason: "expected a C x H x W image".into(),
        }),
    }
}

/// Batched forward pass: image `n` is warped by `params[8n..8n+8]`.
pub fn warp_batch<T: Real>(
    images: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
    params: &[T],
) -> Result<(Vec<T>, Vec<WarpCache>)> {
    let per = c * h * w;
    let mut out = Vec::with_capacity(n * per);
    let mut caches = Vec::with_capacity(n);
    for i in 0..n {
        let d: Vec<f64> = params[8 * i..8 * i + 8]
            .iter()
            .map(|v| v.to_f64().unwrap_or(f64::NAN))
            .collect();
        let d = WarpParams::from_slice(&d)?;
        let jac = inverse_with_jacobian(&d, w, h)?;
        out.extend(sample_into(
            &images[i * per..(i + 1) * per],
            (c, h, w),
            &jac.inverse,
            (h, w),
        ));
        caches.push(WarpCache {
            inverse: jac.inverse,
            d_inverse: jac.d_inverse,
        });
    }
    Ok((out, caches))
}

/// Backward rule of [`warp_batch`]; returns `(d image, d params)`.
pub fn warp_batch_backward<T: Real>(
    images: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
    caches: &[WarpCache],
    grad_out: &[T],
    need_image: bool,
    need_params: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let per = c * h * w;
    let plane_len = h * w;
    let mut d_img = need_image.then(|| vec![T::zero(); n * per]);
    let mut d_par = need_params.then(|| vec![T::zero(); n * 8]);
    for (i, cache) in caches.iter().enumerate().take(n) {
        let img = &images[i * per..(i + 1) * per];
        let g = &grad_out[i * per..(i + 1) * per];
        let mut gm = Matrix3::<f64>::zeros();
        for y in 0..h {
            for x in 0..w {
                let Some((u, v, depth)) = source_coords(&cache.inverse, x as f64, y as f64) else {
                    continue;
                };
                if !(u.is_finite() && v.is_finite()) {
                    continue;
                }
                let (x0f, y0f) = (u.floor(), v.floor());
                let (fx, fy) = (u - x0f, v - y0f);
                let (x0, y0) = (x0f as i64, y0f as i64);
                let mut gu = 0.0f64;
                let mut gv = 0.0f64;
                for ch in 0..c {
                    let go = g[ch * plane_len + y * w + x];
                    if go == T::zero() {
                        continue;
                    }
                    let gof = go.to_f64().unwrap_or(0.0);
                    let plane = &img[ch * plane_len..(ch + 1) * plane_len];
                    if need_params {
                        let p00 = fetch(plane, w, h, x0, y0).to_f64().unwrap_or(0.0);
                        let p10 = fetch(plane, w, h, x0 + 1, y0).to_f64().unwrap_or(0.0);
                        let p01 = fetch(plane, w, h, x0, y0 + 1).to_f64().unwrap_or(0.0);
                        let p11 = fetch(plane, w, h, x0 + 1, y0 + 1).to_f64().unwrap_or(0.0);
                        gu += gof * ((1.0 - fy) * (p10 - p00) + fy * (p11 - p01));
                        gv += gof * ((1.0 - fx) * (p01 - p00) + fx * (p11 - p10));
                    }
                    if let Some(di) = d_img.as_mut() {
                        let dplane = &mut di[i * per + ch * plane_len..i * per + (ch + 1) * plane_len];
                        let mut scatter = |xx: i64, yy: i64, wt: f64| {
                            if wt != 0.0 && xx >= 0 && yy >= 0 && xx < w as i64 && yy < h as i64 {
                                dplane[yy as usize * w + xx as usize] += go * T::from_f64c(wt);
                            }
                        };
                        scatter(x0, y0, (1.0 - fx) * (1.0 - fy));
                        scatter(x0 + 1, y0, fx * (1.0 - fy));
                        scatter(x0, y0 + 1, (1.0 - fx) * fy);
                        scatter(x0 + 1, y0 + 1, fx * fy);
                    }
                }
                if need_params && (gu != 0.0 || gv != 0.0) {
                    let p = [x as f64, y as f64, 1.0];
                    for j in 0..3 {
                        let pj = p[j] / depth;
                        gm[(0, j)] += gu * pj;
                        gm[(1, j)] += gv * pj;
                        gm[(2, j)] -= (gu * u + gv * v) * pj;
                    }
                }
            }
        }
        if let Some(dp) = d_par.as_mut() {
            for k in 0..8 {
                dp[8 * i + k] = T::from_f64c(gm.component_mul(&cache.d_inverse[k]).sum());
            }
        }
    }
    (d_img, d_par)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warp::homography::corners_to_homography;

    fn ramp(w: usize, h: usize) -> Tensor<f64> {
        Tensor::from_fn([1, h, w], |i| (i % w) as f64 / w as f64)
    }

    #[test]
    fn identity_is_exact() {
        let img = Tensor::from_fn([1, 7, 9], |i| ((i * 37) % 11) as f64 / 11.0);
        let out = warp_image(&img, &Homography::identity()).unwrap();
        assert_eq!(out, img);
        let (b, _) = warp_batch(img.data(), (1, 1, 7, 9), &[0.0; 8]).unwrap();
        assert_eq!(b, img.data());
    }

    #[test]
    fn half_pixel_shift_averages_neighbours() {
        let (w, h) = (10, 6);
        let img = ramp(w, h);
        // output(x) = input(x - 0.5)
        let out = warp_image(&img, &Homography::translation(0.5, 0.0)).unwrap();
        for y in 0..h {
            for x in 1..w {
                let expect = 0.5 * (img.data()[y * w + x - 1] + img.data()[y * w + x]);
                assert!((out.data()[y * w + x] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn out_of_frame_reads_zero() {
        let img = Tensor::full([1, 8, 8], 1.0f64);
        let out = warp_image(&img, &Homography::translation(20.0, 0.0)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        let d = crate::warp::WarpParams::translation(-30.0, 0.0);
        let h = corners_to_homography(&d, 8, 8).unwrap();
        assert!(warp_image(&img, &h).unwrap().data().iter().all(|&v| v == 0.0));
    }
}
