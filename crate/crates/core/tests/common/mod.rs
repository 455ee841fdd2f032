#![allow(dead_code)]

use std::path::{Path, PathBuf};

use congeal::autodiff::Tensor;
use congeal::dataset::ImageStack;
use congeal::io::{read_idx_images, read_idx_labels};
use congeal::models::{Activation, LayerSpec, NetworkSpec};

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

/// 1000 threes followed by 64 sevens, 28x28.
pub fn digits() -> (ImageStack, Vec<u8>) {
    let d = data_dir();
    (
        read_idx_images(&d.join("digits-3-7-images.idx3-ubyte")).unwrap(),
        read_idx_labels(&d.join("digits-3-7-labels.idx1-ubyte")).unwrap(),
    )
}

pub fn template28(i: usize) -> Tensor<f32> {
    let (stack, _) = digits();
    Tensor::new([1, 1, 28, 28], stack.image(i).to_vec()).unwrap()
}

/// 2x2 mean-pooled digit.
pub fn template14(i: usize) -> Tensor<f32> {
    let t = template28(i);
    let d = t.data();
    Tensor::from_fn([1, 1, 14, 14], |k| {
        let (y, x) = (k / 14, k % 14);
        let at = |yy: usize, xx: usize| d[yy * 28 + xx];
        0.25 * (at(2 * y, 2 * x) + at(2 * y + 1, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x + 1))
    })
}

/// Small network on 14x14 images, cheap enough for gradient checks.
pub fn toy_spec() -> NetworkSpec {
    NetworkSpec {
        channels: 1,
        height: 14,
        width: 14,
        aligner: vec![LayerSpec::conv(3, 2, 2), LayerSpec::linear(8).with(Activation::None)],
        aligner_blocks: 2,
        trust_radius: 0.25,
        encoder: vec![LayerSpec::conv(3, 4, 2), LayerSpec::linear(6).with(Activation::Sigmoid)],
        decoder: vec![
            LayerSpec::linear(2 * 7 * 7),
            LayerSpec::reshape(2, 7, 7),
            LayerSpec::upsample(),
            LayerSpec::conv(3, 1, 1).with(Activation::None),
        ],
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}
