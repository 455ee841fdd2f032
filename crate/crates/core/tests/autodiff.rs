use congeal::autodiff::{grad_check, GradCheckOptions, Tape, Tensor};
use congeal::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Direct nested-loop convolution, independent of the im2col path.
fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, stride: usize, pad: usize) -> Tensor<f64> {
    let (n, c, h, wd) = x.dims4().unwrap();
    let (o, _, k, _) = w.dims4().unwrap();
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros([n, o, ho, wo]);
    for ni in 0..n {
        for oi in 0..o {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.map(|b| b.data()[oi]).unwrap_or(0.0);
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((ni * c + ci) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((oi * c + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    out.data_mut()[((ni * o + oi) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

fn run_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, stride: usize, pad: usize) -> Tensor<f64> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone()).unwrap();
    let wv = tape.constant(w.clone()).unwrap();
    let bv = b.map(|b| tape.constant(b.clone()).unwrap());
    let y = tape.conv2d(xv, wv, bv, stride, pad).unwrap();
    tape.value(y).clone()
}

#[test]
fn conv_of_ones_sums_nine() {
    let x = Tensor::full([1, 1, 3, 3], 1.0);
    let w = Tensor::full([1, 1, 3, 3], 1.0);
    let y = run_conv(&x, &w, None, 1, 0);
    assert_eq!(y.shape(), &[1, 1, 1, 1]);
    assert_eq!(y.data(), &[9.0]);
}

#[test]
fn centred_delta_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[2, 1, 6, 5], &mut rng);
    let mut w = Tensor::zeros([1, 1, 3, 3]);
    w.data_mut()[4] = 1.0;
    assert_eq!(run_conv(&x, &w, None, 1, 1), x);
}

#[test]
fn strided_conv_matches_direct_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[1, 2, 5, 5], &mut rng);
    let w = random(&[3, 2, 3, 3], &mut rng);
    let got = run_conv(&x, &w, None, 2, 0);
    let want = conv_oracle(&x, &w, None, 2, 0);
    assert_eq!(got.shape(), want.shape());
    for (a, b) in got.data().iter().zip(want.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn conv_agrees_with_direct_loop(
        n in 1usize..=2, c in 1usize..=4, h in 3usize..=8, w in 3usize..=8,
        o in 1usize..=3, half_k in 0usize..=2, stride in 1usize..=2, seed in 0u64..1000,
    ) {
        let k = 2 * half_k + 1;
        prop_assume!(k <= h + 2 * half_k && k <= w + 2 * half_k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[n, c, h, w], &mut rng);
        let wt = random(&[o, c, k, k], &mut rng);
        let b = random(&[o], &mut rng);
        let got = run_conv(&x, &wt, Some(&b), stride, half_k);
        let want = conv_oracle(&x, &wt, Some(&b), stride, half_k);
        prop_assert_eq!(got.shape(), want.shape());
        for (a, e) in got.data().iter().zip(want.data()) {
            prop_assert!((a - e).abs() < 1e-12);
        }
    }
}

#[test]
fn conv_rejects_bad_shapes() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros([1, 2, 5, 5])).unwrap();
    let w = tape.constant(Tensor::zeros([3, 1, 3, 3])).unwrap();
    let err = tape.conv2d(x, w, None, 1, 1).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[1, 2, 5, 5]") && msg.contains("[3, 1, 3, 3]"), "{msg}");
    let w3 = tape.constant(Tensor::zeros([3, 2, 3, 3])).unwrap();
    assert!(tape.conv2d(x, w3, None, 3, 1).is_err());
}

#[test]
fn non_finite_inputs_are_rejected() {
    let mut tape = Tape::<f64>::new();
    assert!(matches!(
        tape.constant(Tensor::new([2], vec![1.0, f64::NAN]).unwrap()),
        Err(Error::NonFinite(_))
    ));
}

#[test]
fn grad_of_sum_is_ones() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::from_fn([2, 3], |i| i as f64)).unwrap();
    let s = tape.sum(x).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.tensor(x).data(), &[1.0; 6]);
}

#[test]
fn grad_of_l1_distance_is_sign() {
    let mut tape = Tape::new();
    let x = tape
        .param(Tensor::new([4], vec![1.0, -2.0, 0.5, 3.0]).unwrap())
        .unwrap();
    let y = tape
        .constant(Tensor::new([4], vec![0.0, 1.0, 1.0, -1.0]).unwrap())
        .unwrap();
    let d = tape.sub(x, y).unwrap();
    let l = tape.l1_sum(d).unwrap();
    assert_eq!(tape.scalar(l), 1.0 + 3.0 + 0.5 + 4.0);
    let g = tape.backward(l).unwrap();
    assert_eq!(g.tensor(x).data(), &[1.0, -1.0, -1.0, 1.0]);
    // subgradient at zero is zero
    let mut tape = Tape::new();
    let z = tape.param(Tensor::new([2], vec![0.0, 2.0]).unwrap()).unwrap();
    let l = tape.l1_sum(z).unwrap();
    assert_eq!(tape.backward(l).unwrap().tensor(z).data(), &[0.0, 1.0]);
}

#[test]
fn backward_rules_out_misuse() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::from_fn([3], |i| i as f64)).unwrap();
    assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    assert!(matches!(tape.backward(s), Err(Error::TapeConsumed)));
}

#[test]
fn unreachable_leaf_gets_zero_grad() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::from_fn([3], |i| i as f64)).unwrap();
    let unused = tape.param(Tensor::from_fn([2], |i| i as f64)).unwrap();
    let s = tape.sum(x).unwrap();
    let g = tape.backward(s).unwrap();
    assert!(g.get(unused).is_none());
    assert_eq!(g.tensor(unused).data(), &[0.0, 0.0]);
}

#[test]
fn tanh_conv_l1_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&[1, 1, 6, 6], &mut rng);
    let k = random(&[2, 1, 3, 3], &mut rng);
    let errs = grad_check(
        |t, v| {
            let y = t.conv2d(v[0], v[1], None, 1, 1)?;
            let y = t.tanh(y)?;
            t.l1_sum(y)
        },
        &[x, k],
        GradCheckOptions {
            step: 1e-5,
            samples: 36,
        },
        &mut rng,
    )
    .unwrap();
    assert!(errs.iter().all(|&e| e < 1e-4), "{errs:?}");
}

#[test]
fn shared_input_accumulates_over_branches() {
    // loss = sum(tanh(x)) + sum(sigmoid(2x)), both branches read x
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[7], &mut rng);
    let mut tape = Tape::new();
    let xv = tape.param(x.clone()).unwrap();
    let a = tape.tanh(xv).unwrap();
    let a = tape.sum(a).unwrap();
    let x2 = tape.scale(xv, 2.0).unwrap();
    let b = tape.sigmoid(x2).unwrap();
    let b = tape.sum(b).unwrap();
    let l = tape.add(a, b).unwrap();
    let g = tape.backward(l).unwrap();
    for (i, &xi) in x.data().iter().enumerate() {
        let s = 1.0 / (1.0 + (-2.0 * xi).exp());
        let expect = (1.0 - xi.tanh().powi(2)) + 2.0 * s * (1.0 - s);
        assert!((g.tensor(xv).data()[i] - expect).abs() < 1e-12);
    }
}

#[test]
fn every_operator_passes_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let opts = GradCheckOptions {
        step: 1e-5,
        samples: 30,
    };
    let x = random(&[2, 2, 4, 4], &mut rng);
    let y = random(&[2, 2, 4, 4], &mut rng);
    let r = random(&[1, 2, 4, 4], &mut rng);
    let w = random(&[3, 2, 3, 3], &mut rng);
    let bias = random(&[3], &mut rng);

    let cases: Vec<(&str, Vec<f64>)> = vec![
        (
            "conv2d stride 2 + bias",
            grad_check(
                |t, v| {
                    let o = t.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
                    let o = t.tanh(o)?;
                    t.sum(o)
                },
                &[x.clone(), w.clone(), bias.clone()],
                opts,
                &mut rng,
            )
            .unwrap(),
        ),
        (
            "upsample + sigmoid",
            grad_check(
                |t, v| {
                    let o = t.upsample2x(v[0])?;
                    let o = t.sigmoid(o)?;
                    let o = t.mul(o, o)?;
                    t.sum(o)
                },
                std::slice::from_ref(&x),
                opts,
                &mut rng,
            )
            .unwrap(),
        ),
        (
            "add/sub/scale/l1",
            grad_check(
                |t, v| {
                    let a = t.add(v[0], v[1])?;
                    let s = t.scale(a, -0.7)?;
                    let d = t.sub(s, v[1])?;
                    t.l1_sum(d)
                },
                &[x.clone(), y.clone()],
                opts,
                &mut rng,
            )
            .unwrap(),
        ),
        (
            "broadcast sub + concat",
            grad_check(
                |t, v| {
                    let d = t.sub_broadcast(v[0], v[1])?;
                    let c = t.concat_channels(d, v[1])?;
                    let c = t.tanh(c)?;
                    t.sum(c)
                },
                &[x.clone(), r.clone()],
                opts,
                &mut rng,
            )
            .unwrap(),
        ),
        (
            "reshape + linear + weighted dot",
            grad_check(
                |t, v| {
                    let f = t.reshape(v[0], &[2, 32])?;
                    let h = t.linear(f, v[1], Some(v[2]))?;
                    let h = t.sigmoid(h)?;
                    t.weighted_dot(h, &[0.1, 0.2, 0.3, 0.4])
                },
                &[x.clone(), random(&[4, 32], &mut rng), random(&[4], &mut rng)],
                opts,
                &mut rng,
            )
            .unwrap(),
        ),
        (
            "clamp",
            grad_check(
                |t, v| {
                    let c = t.clamp(v[0], 0.5)?;
                    let c = t.mul(c, v[0])?;
                    t.sum(c)
                },
                // keep away from the clamp kinks at +-0.5
                &[Tensor::from_fn([6], |i| [-0.9, -0.2, 0.1, 0.3, 0.8, 1.4][i])],
                opts,
                &mut rng,
            )
            .unwrap(),
        ),
    ];
    for (name, errs) in cases {
        assert!(errs.iter().all(|&e| e < 1e-4), "{name}: {errs:?}");
    }
}

#[test]
fn replay_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::<f32>::from_fn([4, 1, 9, 9], |_| rng.random_range(0.0..1.0));
        let w = Tensor::<f32>::from_fn([5, 1, 3, 3], |_| rng.random_range(-1.0..1.0));
        let mut tape = Tape::new();
        let xv = tape.param(x).unwrap();
        let wv = tape.param(w).unwrap();
        let y = tape.conv2d(xv, wv, None, 2, 1).unwrap();
        let y = tape.tanh(y).unwrap();
        let l = tape.l1_sum(y).unwrap();
        let loss = tape.scalar(l);
        let g = tape.backward(l).unwrap();
        (
            loss.to_bits(),
            g.tensor(wv).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        )
    };
    assert_eq!(run(), run());
}
