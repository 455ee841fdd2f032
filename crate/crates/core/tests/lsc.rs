use congeal::autodiff::Tensor;
use congeal::lsc::{lsc_align, LscConfig};
use congeal::warp::{warp_image, Homography};
use proptest::prelude::*;

/// Band-limited test image: two offset Gaussian bumps.
fn bumps(w: usize, h: usize) -> Tensor<f32> {
    let s2 = (w.min(h) as f64 / 8.0).powi(2);
    Tensor::from_fn([1, 1, h, w], |k| {
        let (x, y) = ((k % w) as f64, (k / w) as f64);
        let g = |cx: f64, cy: f64, a: f64| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s2)).exp();
        (g(0.42 * w as f64, 0.45 * h as f64, 1.0) + g(0.62 * w as f64, 0.6 * h as f64, 0.6)) as f32
    })
}

/// Image content shifted by `(tx, ty)`: pixel `y` reads `x - t`.
fn shifted(img: &Tensor<f32>, tx: f64, ty: f64) -> Tensor<f32> {
    warp_image(img, &Homography::translation(tx, ty)).unwrap()
}

/// Translation encoded by a recovered warp: aligning `I(x) = R(x - t)` to
/// `R` needs a warp that moves content by `-t`.
fn recovered_shift(p: &congeal::warp::WarpParams) -> (f64, f64) {
    let (sx, sy) = (0..4).fold((0.0, 0.0), |a, c| (a.0 + p.0[2 * c], a.1 + p.0[2 * c + 1]));
    (-sx / 4.0, -sy / 4.0)
}

#[test]
fn identical_image_gives_zero_first_update() {
    let r = bumps(28, 28);
    let res = lsc_align(&r, &r, &LscConfig::default()).unwrap();
    let fit = &res.fits[0];
    assert!(fit.params.is_identity());
    assert_eq!(fit.updates[0], 0.0);
    assert!(fit.converged);
    assert_eq!(res.aligned.data(), r.data());
}

#[test]
fn recovers_a_known_subpixel_shift() {
    let r = bumps(28, 28);
    let img = shifted(&r, 1.0, 0.4);
    let res = lsc_align(&img, &r, &LscConfig::default()).unwrap();
    let (tx, ty) = recovered_shift(&res.fits[0].params);
    assert!((tx - 1.0).abs() < 0.1 && (ty - 0.4).abs() < 0.1, "({tx}, {ty})");
    let h = &res.fits[0].history;
    assert!(h.windows(2).all(|w| w[1] < w[0]), "{h:?}");
    assert!(h.last().unwrap() < &(0.01 * h[0]));
}

#[test]
fn permuting_inputs_permutes_outputs() {
    let r = bumps(20, 20);
    let a = shifted(&r, 0.7, -0.3);
    let b = shifted(&r, -1.2, 0.5);
    let pair = |p: &Tensor<f32>, q: &Tensor<f32>| Tensor::new([2, 1, 20, 20], [p.data(), q.data()].concat()).unwrap();
    let (ab, ba) = (pair(&a, &b), pair(&b, &a));
    let cfg = LscConfig::default();
    let x = lsc_align(&ab, &r, &cfg).unwrap();
    let y = lsc_align(&ba, &r, &cfg).unwrap();
    assert_eq!(x.fits[0], y.fits[1]);
    assert_eq!(x.fits[1], y.fits[0]);
}

#[test]
fn pyramid_start_still_recovers_the_shift() {
    let r = bumps(28, 28);
    let img = shifted(&r, 2.0, -1.5);
    let cfg = LscConfig {
        pyramid: 2,
        ..Default::default()
    };
    let (tx, ty) = recovered_shift(&lsc_align(&img, &r, &cfg).unwrap().fits[0].params);
    assert!((tx - 2.0).abs() < 0.1 && (ty + 1.5).abs() < 0.1, "({tx}, {ty})");
}

#[test]
fn mismatched_sizes_are_rejected() {
    let r = bumps(28, 28);
    assert!(lsc_align(&bumps(20, 20), &r, &LscConfig::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn translations_up_to_two_pixels_come_back_within_half_a_pixel(tx in -2.0f64..2.0, ty in -2.0f64..2.0) {
        prop_assume!(tx.hypot(ty) <= 2.0);
        let r = bumps(28, 28);
        let (rx, ry) = recovered_shift(&lsc_align(&shifted(&r, tx, ty), &r, &LscConfig::default()).unwrap().fits[0].params);
        prop_assert!((rx - tx).abs() < 0.5 && (ry - ty).abs() < 0.5, "({rx}, {ry}) vs ({tx}, {ty})");
    }
}
