//! Scores a stack with APSNR and landmark error, then round-trips it
//! through IDX, PGM and the report format.
//!
//! cargo run --release --example metrics_and_io -- [out-dir]

use std::path::{Path, PathBuf};

use congeal::congeal::RunReport;
use congeal::io::{max_normalise, read_idx_images, read_report, write_idx_images, write_image, write_report};
use congeal::metrics::{apsnr, landmark_error, stack_stats, LandmarkSet};
use congeal::warp::{Homography, WarpParams};

fn main() -> congeal::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "metrics-out".into()));
    std::fs::create_dir_all(&out).map_err(|e| congeal::Error::io(&out, e))?;
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/digits-3-7-images.idx3-ubyte");
    let digits = read_idx_images(&data)?;
    let threes = digits.select(&(0..100).collect::<Vec<_>>())?;

    let stats = stack_stats((1, 28, 28), threes.images())?;
    println!(
        "100 threes: APSNR {:.3} dB, variance energy {:.3}",
        apsnr(&stats)?,
        stats.variance_energy()?
    );
    let (var, max) = max_normalise(&stats.variance()?);
    write_image(&out.join("variance.pgm"), &var, (1, 28, 28))?;
    println!("variance image written (raw max {max:.4})");

    let path = out.join("threes.idx3-ubyte");
    write_idx_images(&path, &threes)?;
    assert_eq!(read_idx_images(&path)?, threes);

    // Two faces whose mouths differ by 2 px; eyes 40 px apart.
    let set = LandmarkSet::new(
        (0, 1),
        vec!["a".into(), "b".into()],
        vec![
            vec![(20.0, 30.0), (60.0, 30.0), (40.0, 55.0)],
            vec![(20.0, 30.0), (60.0, 30.0), (40.0, 57.0)],
        ],
    )?;
    let e = landmark_error(&set, &[Homography::identity(), Homography::identity()])?;
    println!("landmark error per point {:?} %, mean {:.3} %", e.per_landmark, e.mean);

    let report = RunReport {
        method: "example".into(),
        config: vec![("note".into(), "identity warps".into())],
        n: threes.n,
        dims: (1, 28, 28),
        epochs: Vec::new(),
        apsnr_before: apsnr(&stats)?,
        apsnr_after: apsnr(&stats)?,
        before: stats.clone(),
        after: stats,
        params: vec![WarpParams::identity(); threes.n],
        mean_area_ratio: 1.0,
        flagged: 0,
        stopped_early: false,
        images: vec![("variance".into(), out.join("variance.pgm").display().to_string())],
        wall_clock_s: 0.0,
    };
    write_report(&out.join("report.txt"), &report)?;
    assert_eq!(read_report(&out.join("report.txt"))?, report);
    println!("report round trip ok: {}", out.join("report.txt").display());
    Ok(())
}
