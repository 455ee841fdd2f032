//! Least-squares alignment: recovers a known shift, then aligns a small
//! perturbed corpus and reports the APSNR gain.
//!
//! cargo run --release --example lsc_baseline -- [n] [sigma]

use std::path::Path;

use congeal::autodiff::Tensor;
use congeal::dataset::SyntheticSource;
use congeal::io::read_idx_images;
use congeal::lsc::{lsc_align, lsc_run, LscConfig};
use congeal::warp::{warp_image, Homography, PerturbModel};

fn main() -> congeal::Result<()> {
    let mut args = std::env::args().skip(1);
    let n = args.next().and_then(|v| v.parse().ok()).unwrap_or(200);
    let sigma = args.next().and_then(|v| v.parse().ok()).unwrap_or(0.1);

    let blob = Tensor::from_fn([1, 1, 28, 28], |k| {
        let (x, y) = ((k % 28) as f32, (k / 28) as f32);
        (-((x - 12.0).powi(2) + (y - 14.0).powi(2)) / 24.0).exp()
    });
    let moved = warp_image(&blob, &Homography::translation(1.3, -0.8))?;
    let fit = &lsc_align(&moved, &blob, &LscConfig::default())?.fits[0];
    let p = &fit.params.0;
    println!(
        "shift (1.3, -0.8): corners moved by ({:.3}, {:.3}) in {} steps, error {:.2e} -> {:.2e}",
        (p[0] + p[2] + p[4] + p[6]) / 4.0,
        (p[1] + p[3] + p[5] + p[7]) / 4.0,
        fit.history.len() - 1,
        fit.history[0],
        fit.history.last().unwrap()
    );

    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/digits-3-7-images.idx3-ubyte");
    let template = Tensor::new([1, 1, 28, 28], read_idx_images(&data)?.image(0).to_vec())?;
    let source = SyntheticSource::new(template, PerturbModel::Perspective { sigma }, 7, n)?;
    let (report, _) = lsc_run(&source, 0, &LscConfig::for_sigma(sigma), 256)?;
    println!(
        "{n} images at sigma {sigma}: APSNR {:.3} -> {:.3} dB, {} unconverged, {:.1}s",
        report.apsnr_before, report.apsnr_after, report.flagged, report.wall_clock_s
    );
    Ok(())
}
