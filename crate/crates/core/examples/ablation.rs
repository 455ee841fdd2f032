//! Distortion-only, complexity-only and joint runs on one perturbed corpus.
//! The complexity-only arm shows the shrinking effect as an area ratio
//! below one.
//!
//! cargo run --release --example ablation -- [n] [epochs]

use std::path::Path;

use congeal::autodiff::Tensor;
use congeal::congeal::{ablate, CongealConfig};
use congeal::dataset::SyntheticSource;
use congeal::io::read_idx_images;
use congeal::models::NetworkSpec;
use congeal::warp::PerturbModel;

fn main() -> congeal::Result<()> {
    let mut args = std::env::args().skip(1);
    let n = args.next().and_then(|v| v.parse().ok()).unwrap_or(300);
    let epochs = args.next().and_then(|v| v.parse().ok()).unwrap_or(10);
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/digits-3-7-images.idx3-ubyte");
    let template = Tensor::new([1, 1, 28, 28], read_idx_images(&data)?.image(0).to_vec())?;
    let source = SyntheticSource::new(template, PerturbModel::Perspective { sigma: 0.1 }, 7, n)?;
    let cfg = CongealConfig {
        lambda: 0.1,
        lr: 1e-3,
        batch: 16,
        epochs,
        network: "desk".into(),
        ..Default::default()
    };
    let result = ablate(&source, &NetworkSpec::desk(cfg.code_size), &cfg, None)?;
    println!("{:>7} {:>10} {:>10} {:>10}", "arm", "before", "after", "area");
    for (name, r) in result.arms() {
        println!(
            "{name:>7} {:>10.3} {:>10.3} {:>10.3}",
            r.apsnr_before, r.apsnr_after, r.mean_area_ratio
        );
    }
    Ok(())
}
