//! Builds a small conv/tanh/warp/l1 graph on the tape and compares its
//! gradients with central differences in double precision.
//!
//! cargo run --release --example gradient_check

use congeal::autodiff::{grad_check, GradCheckOptions, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> congeal::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut random = |shape: &[usize]| Tensor::<f64>::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0));
    let image = random(&[2, 1, 10, 10]);
    let kernel = random(&[1, 1, 3, 3]);
    let corners = random(&[2, 8]);
    let target = random(&[1, 1, 10, 10]);

    // Forward once and read a few analytic gradients.
    let mut tape = Tape::new();
    let x = tape.param(image.clone())?;
    let k = tape.param(kernel.clone())?;
    let d = tape.param(corners.clone())?;
    let loss = graph(&mut tape, &[x, k, d], &target)?;
    println!("loss = {:.6}", tape.scalar(loss));
    let grads = tape.backward(loss)?;
    println!("dL/d corners (image 0) = {:?}", &grads.get(d).unwrap()[..8]);

    let errors = grad_check(
        |t, v| graph(t, v, &target),
        &[image, kernel, corners],
        GradCheckOptions::default(),
        &mut ChaCha8Rng::seed_from_u64(2),
    )?;
    for (name, e) in ["image", "kernel", "corners"].iter().zip(errors) {
        println!("{name:>8}: max relative error {e:.2e}");
    }
    Ok(())
}

fn graph(
    t: &mut Tape<f64>,
    v: &[congeal::autodiff::Var],
    target: &Tensor<f64>,
) -> congeal::Result<congeal::autodiff::Var> {
    let h = t.conv2d(v[0], v[1], None, 1, 1)?;
    let h = t.tanh(h)?;
    let w = t.warp(h, v[2])?;
    let r = t.constant(target.clone())?;
    let diff = t.sub_broadcast(w, r)?;
    t.l1_sum(diff)
}
