use congeal::metrics::{apsnr, apsnr_of, landmark_error, stack_stats, LandmarkSet, StackStats};
use congeal::warp::Homography;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn one_pixel(values: &[f64]) -> f64 {
    apsnr_of((1, 1, 1), values.iter().map(std::slice::from_ref)).unwrap()
}

#[test]
fn apsnr_hand_cases() {
    assert!((one_pixel(&[0.0, 1.0]) - 10.0 * 4f64.log10()).abs() < 1e-3);
    assert!((one_pixel(&[0.0, 1.0]) - 6.0206).abs() < 1e-3);
    // Deviation of one full intensity step from the mean gives MSE = 255^2.
    assert!(one_pixel(&[-1.0, 1.0]).abs() < 1e-3);
    assert_eq!(one_pixel(&[0.3, 0.3, 0.3]), f64::INFINITY);
}

#[test]
fn identical_and_two_image_stacks() {
    let s = stack_stats((1, 2, 2), [[0.2f32, 0.4, 0.6, 0.8].as_slice(); 5]).unwrap();
    assert!(s.variance().unwrap().iter().all(|&v| v == 0.0));
    let s = stack_stats((1, 1, 2), [[0.0f32, 0.5].as_slice(), [1.0, 0.5].as_slice()]).unwrap();
    assert_eq!(s.mean, vec![0.5, 0.5]);
    assert_eq!(s.variance().unwrap(), vec![0.25, 0.0]);
    assert!(stack_stats::<f32, _>((1, 1, 2), std::iter::empty::<&[f32]>()).is_err());
}

#[test]
fn streaming_stats_match_two_pass_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let imgs: Vec<Vec<f64>> = (0..100)
        .map(|_| (0..12).map(|_| rng.random::<f64>()).collect())
        .collect();
    let s = stack_stats((1, 3, 4), imgs.iter().map(Vec::as_slice)).unwrap();
    let n = imgs.len() as f64;
    let var = s.variance().unwrap();
    for p in 0..12 {
        let mean = imgs.iter().map(|im| im[p]).sum::<f64>() / n;
        let v = imgs.iter().map(|im| (im[p] - mean).powi(2)).sum::<f64>() / n;
        assert!((s.mean[p] - mean).abs() < 1e-10);
        assert!((var[p] - v).abs() < 1e-10);
    }
    let mut a = stack_stats((1, 3, 4), imgs[..37].iter().map(Vec::as_slice)).unwrap();
    let b = stack_stats((1, 3, 4), imgs[37..].iter().map(Vec::as_slice)).unwrap();
    a.merge(&b).unwrap();
    for (x, y) in a.variance().unwrap().iter().zip(&var) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn apsnr_falls_as_noise_grows() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let base: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
    let mut last = f64::INFINITY;
    for sd in [0.01, 0.05, 0.2] {
        let noise = Normal::new(0.0, sd).unwrap();
        let mut s = StackStats::new((1, 8, 8));
        for _ in 0..50 {
            let img: Vec<f64> = base.iter().map(|&v| v + noise.sample(&mut rng)).collect();
            s.push(&img).unwrap();
        }
        let a = apsnr(&s).unwrap();
        assert!(a < last, "{a} !< {last}");
        last = a;
    }
}

fn two_image_set(offset: f64) -> LandmarkSet {
    LandmarkSet::new(
        (0, 1),
        vec!["a".into(), "b".into()],
        vec![
            vec![(10.0, 50.0), (110.0, 50.0), (60.0, 80.0 - offset)],
            vec![(10.0, 50.0), (110.0, 50.0), (60.0, 80.0 + offset)],
        ],
    )
    .unwrap()
}

#[test]
fn landmark_hand_cases() {
    let id = [Homography::identity(), Homography::identity()];
    let e = landmark_error(&two_image_set(0.0), &id).unwrap();
    assert_eq!(e.per_landmark, vec![0.0, 0.0, 0.0]);
    assert_eq!(e.mean, 0.0);
    let e = landmark_error(&two_image_set(1.0), &id).unwrap();
    assert!((e.per_landmark[2] - 1.0).abs() < 1e-12, "{:?}", e.per_landmark);
    assert!((e.mean - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn landmark_error_ignores_common_translation_and_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let points: Vec<Vec<(f64, f64)>> = (0..6)
        .map(|_| {
            vec![
                (30.0 + rng.random::<f64>(), 40.0 + rng.random::<f64>()),
                (70.0 + rng.random::<f64>(), 41.0 + rng.random::<f64>()),
                (50.0 + 3.0 * rng.random::<f64>(), 70.0 + 3.0 * rng.random::<f64>()),
            ]
        })
        .collect();
    let ids: Vec<String> = (0..6).map(|i| i.to_string()).collect();
    let set = LandmarkSet::new((0, 1), ids.clone(), points.clone()).unwrap();
    let base = landmark_error(&set, &vec![Homography::identity(); 6]).unwrap();
    let shifted = landmark_error(&set, &vec![Homography::translation(4.5, -7.0); 6]).unwrap();
    let doubled = LandmarkSet::new(
        (0, 1),
        ids,
        points
            .iter()
            .map(|p| p.iter().map(|&(x, y)| (2.0 * x, 2.0 * y)).collect())
            .collect(),
    )
    .unwrap();
    let doubled = landmark_error(&doubled, &vec![Homography::identity(); 6]).unwrap();
    for k in 0..3 {
        assert!((base.per_landmark[k] - shifted.per_landmark[k]).abs() < 1e-9);
        assert!((base.per_landmark[k] - doubled.per_landmark[k]).abs() < 1e-9);
    }
}

#[test]
fn landmark_files_round_trip_and_bad_inputs_fail() {
    let set = two_image_set(1.5);
    assert_eq!(LandmarkSet::parse(&set.to_text()).unwrap(), set);
    let close = LandmarkSet::new((0, 1), vec!["a".into()], vec![vec![(5.0, 5.0), (5.5, 5.0)]]).unwrap();
    assert!(landmark_error(&close, &[Homography::identity()]).is_err());
    assert!(LandmarkSet::parse("eyes 0 0\na 1 2 3 4\n").is_err());
    assert!(landmark_error(&set, &[Homography::identity()]).is_err());
}

proptest! {
    #[test]
    fn apsnr_is_permutation_invariant(vals in prop::collection::vec(0.0f64..1.0, 8..40), seed in any::<u64>()) {
        let imgs: Vec<&[f64]> = vals.chunks_exact(4).collect();
        let mut shuffled = imgs.clone();
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
        let a = apsnr_of((1, 2, 2), imgs).unwrap();
        let b = apsnr_of((1, 2, 2), shuffled).unwrap();
        prop_assert!(a == b || (a - b).abs() < 1e-9 * a.abs().max(1.0));
    }
}
