//! Congeals seeded perspective copies of one digit and checks the predicted
//! warps against the known ones.
//!
//! cargo run --release --example synthetic_recovery -- [n] [epochs] [lr] [sigma]

use std::path::Path;

use congeal::congeal::{infer_align, train, CongealConfig, TrainOptions};
use congeal::dataset::{ImageSource, SyntheticSource};
use congeal::io::read_idx_images;
use congeal::models::NetworkSpec;
use congeal::warp::{compose, PerturbModel};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn main() -> congeal::Result<()> {
    let (n, epochs, lr, sigma) = (arg(1, 1000usize), arg(2, 30usize), arg(3, 1e-3f64), arg(4, 0.1f64));
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/digits-3-7-images.idx3-ubyte");
    let digits = read_idx_images(&data)?;
    let template = congeal::autodiff::Tensor::new([1, 1, 28, 28], digits.image(0).to_vec())?;
    let source = SyntheticSource::new(template, PerturbModel::Perspective { sigma }, 7, n)?;
    let cfg = CongealConfig {
        lr,
        epochs,
        lambda: 0.1,
        batch: 16,
        network: "desk".into(),
        ..Default::default()
    };
    let spec = NetworkSpec::by_name(&cfg.network, cfg.code_size)?;
    let mut out = std::io::stdout();
    let run = train(
        &source,
        &spec,
        &cfg,
        TrainOptions {
            progress: Some(&mut out),
            ..Default::default()
        },
    )?;
    let r = &run.report;
    println!(
        "apsnr {:.3} -> {:.3} (gain {:.3} dB), area ratio {:.4}, {:.1}s",
        r.apsnr_before,
        r.apsnr_after,
        r.apsnr_gain(),
        r.mean_area_ratio,
        r.wall_clock_s
    );
    let errors: Vec<f64> = (1..n)
        .map(|i| {
            let truth = source.truth(i)?;
            let pred = r.params[i].to_homography(28, 28)?;
            Ok(compose(&pred, &truth)?.corner_error(28, 28))
        })
        .collect::<congeal::Result<_>>()?;
    println!("training-set median corner error {:.3} px", median(errors));

    let held_out = SyntheticSource::new(source.template().clone(), PerturbModel::Perspective { sigma }, 8, 201)?;
    let idx: Vec<usize> = (1..201).collect();
    let a = infer_align(&run.model, &run.reference, &held_out.batch(&idx)?)?;
    let errors: Vec<f64> = idx
        .iter()
        .zip(&a.params)
        .map(|(&i, p)| Ok(compose(&p.to_homography(28, 28)?, &held_out.truth(i)?)?.corner_error(28, 28)))
        .collect::<congeal::Result<_>>()?;
    println!("held-out median corner error {:.3} px", median(errors));
    Ok(())
}
