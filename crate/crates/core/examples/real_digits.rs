//! Congeals real handwritten threes against the first one and writes the
//! mean and variance images before and after.
//!
//! cargo run --release --example real_digits -- [epochs] [lambda] [out-dir]

use std::path::{Path, PathBuf};

use congeal::congeal::{train, CongealConfig, TrainOptions};
use congeal::io::{max_normalise, read_idx_images, read_idx_labels, write_image};
use congeal::models::NetworkSpec;

fn main() -> congeal::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|v| v.parse().ok()).unwrap_or(30);
    let lambda = args.next().and_then(|v| v.parse().ok()).unwrap_or(0.1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "real-digits-out".into()));
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let images = read_idx_images(&data.join("digits-3-7-images.idx3-ubyte"))?;
    let labels = read_idx_labels(&data.join("digits-3-7-labels.idx1-ubyte"))?;
    let threes: Vec<usize> = (0..images.n).filter(|&i| labels[i] == 3).collect();
    let stack = images.select(&threes)?;

    let cfg = CongealConfig {
        lambda,
        lr: 1e-3,
        batch: 16,
        epochs,
        network: "desk".into(),
        ..Default::default()
    };
    let spec = NetworkSpec::by_name(&cfg.network, cfg.code_size)?;
    let mut progress = std::io::stdout();
    let run = train(
        &stack,
        &spec,
        &cfg,
        TrainOptions {
            progress: Some(&mut progress),
            ..Default::default()
        },
    )?;
    let r = &run.report;
    let (eb, ea) = (r.before.variance_energy()?, r.after.variance_energy()?);
    println!(
        "{} images: apsnr {:.3} -> {:.3}, variance energy {:.2} -> {:.2} ({:.1}% drop), area ratio {:.3}",
        r.n,
        r.apsnr_before,
        r.apsnr_after,
        eb,
        ea,
        100.0 * (1.0 - ea / eb),
        r.mean_area_ratio
    );
    std::fs::create_dir_all(&out).map_err(|e| congeal::Error::Io {
        path: out.clone(),
        source: e,
    })?;
    for (tag, s) in [("before", &r.before), ("after", &r.after)] {
        let mean: Vec<f32> = s.mean.iter().map(|&v| v as f32).collect();
        write_image(&out.join(format!("mean-{tag}.pgm")), &mean, s.dims)?;
        let (var, max) = max_normalise(&s.variance()?);
        write_image(&out.join(format!("variance-{tag}.pgm")), &var, s.dims)?;
        println!("variance-{tag}.pgm scaled by 1/{max:.5}");
    }
    Ok(())
}
