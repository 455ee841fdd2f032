use congeal::autodiff::{grad_check, GradCheckOptions, Tensor};
use congeal::warp::{
    canonical_corners, compose, corners_to_homography, perturb_affine, perturb_perspective_seeded, warp_image,
    AffineRanges, Homography, WarpParams,
};
use nalgebra::{DMatrix, Matrix3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn blob(w: usize, h: usize) -> Tensor<f64> {
    let (cx, cy) = (w as f64 / 2.0 - 0.3, h as f64 / 2.0 + 0.6);
    let s2 = (w.min(h) as f64 / 7.0).powi(2);
    Tensor::from_fn([1, 1, h, w], |i| {
        let (x, y) = ((i % w) as f64, (i / w) as f64);
        let r2 = (x - cx).powi(2) + 0.6 * (y - cy).powi(2);
        (-r2 / (2.0 * s2)).exp()
    })
}

/// Textbook DLT: null vector of the 8x9 correspondence matrix via SVD.
fn dlt(src: &[(f64, f64); 4], dst: &[(f64, f64); 4]) -> Matrix3<f64> {
    let mut a = DMatrix::<f64>::zeros(9, 9);
    for i in 0..4 {
        let (x, y) = src[i];
        let (u, v) = dst[i];
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for j in 0..9 {
            a[(2 * i, j)] = r0[j];
            a[(2 * i + 1, j)] = r1[j];
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.unwrap();
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let h = vt.row(imin);
    Matrix3::from_fn(|r, c| h[3 * r + c] / h[8])
}

#[test]
fn corner_homography_matches_dlt_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let d = WarpParams(std::array::from_fn(|_| rng.random_range(-4.0..4.0)));
        let h = corners_to_homography(&d, 28, 28).unwrap();
        let want = dlt(&canonical_corners(28, 28), &d.displaced_corners(28, 28));
        for (a, b) in h.matrix().iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-9, "{} vs {}", h.matrix(), want);
        }
    }
}

proptest! {
    #[test]
    fn corners_reproject_exactly(d in prop::array::uniform8(-6.0f64..6.0), w in 8usize..64, h in 8usize..64) {
        let p = WarpParams(d);
        let hom = corners_to_homography(&p, w, h).unwrap();
        prop_assert_eq!(hom.matrix()[(2, 2)], 1.0);
        for (&(x, y), &(u, v)) in canonical_corners(w, h).iter().zip(p.displaced_corners(w, h).iter()) {
            let (px, py) = hom.apply(x, y);
            prop_assert!((px - u).abs() < 1e-9 && (py - v).abs() < 1e-9);
        }
    }

    #[test]
    fn compose_with_inverse_is_identity(d in prop::array::uniform8(-5.0f64..5.0)) {
        let h = corners_to_homography(&WarpParams(d), 28, 28).unwrap();
        prop_assert_eq!(compose(&h, &Homography::identity()).unwrap(), h);
        let id = compose(&h, &h.inverse().unwrap()).unwrap();
        for (a, b) in id.matrix().iter().zip(Matrix3::<f64>::identity().iter()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn opposite_translations_cancel() {
    let id = compose(&Homography::translation(2.0, 0.0), &Homography::translation(-2.0, 0.0)).unwrap();
    assert_eq!(id, Homography::identity());
}

#[test]
fn warp_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (w, h) = (14, 12);
    let weights = Tensor::from_fn([2, 1, h, w], |_| rng.random_range(-1.0..1.0));
    let images = Tensor::stack(&[blob(w, h), blob(w, h).cast()]).unwrap();
    for _ in 0..4 {
        let d = Tensor::from_fn([2, 8], |_| rng.random_range(-5.0..5.0) + 0.0137);
        let errs = grad_check(
            |t, v| {
                let out = t.warp(v[0], v[1])?;
                let wv = t.constant(weights.clone())?;
                let prod = t.mul(out, wv)?;
                t.sum(prod)
            },
            &[images.clone(), d],
            GradCheckOptions {
                step: 1e-5,
                samples: 16,
            },
            &mut rng,
        )
        .unwrap();
        assert!(errs.iter().all(|&e| e < 1e-4), "{errs:?}");
    }
}

fn psnr(a: &Tensor<f64>, b: &Tensor<f64>, border: usize, w: usize, h: usize) -> f64 {
    let mut se = 0.0;
    let mut n = 0.0;
    for y in border..h - border {
        for x in border..w - border {
            se += (a.data()[y * w + x] - b.data()[y * w + x]).powi(2);
            n += 1.0;
        }
    }
    10.0 * (1.0 / (se / n)).log10()
}

#[test]
fn round_trip_preserves_smooth_images() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (w, h) = (32, 32);
    let img = blob(w, h);
    for _ in 0..10 {
        let d = WarpParams(std::array::from_fn(|_| rng.random_range(-3.0..3.0)));
        let hom = corners_to_homography(&d, w, h).unwrap();
        let back = warp_image(&warp_image(&img, &hom).unwrap(), &hom.inverse().unwrap()).unwrap();
        let p = psnr(&img, &back, 0, w, h);
        assert!(p > 30.0, "round trip psnr {p}");
    }
}

#[test]
fn perturbations_shrink_continuously_to_identity() {
    let img = blob(28, 28).cast::<f64>();
    let mut last = f64::INFINITY;
    for sigma in [0.08, 0.02, 0.005, 0.0] {
        let (_, h) = perturb_perspective_seeded(&img, sigma, 9).unwrap();
        let e = h.corner_error(28, 28);
        assert!(e <= last);
        last = e;
    }
    assert_eq!(last, 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (out, h) = perturb_affine(&blob(28, 28), &AffineRanges::zero(), 40, &mut rng).unwrap();
    assert_eq!(out.shape(), &[1, 1, 40, 40]);
    assert_eq!(h, Homography::translation(6.0, 6.0));
}
