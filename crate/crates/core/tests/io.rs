mod common;

use common::{template14, toy_spec};
use congeal::congeal::{train, CongealConfig, TrainOptions};
use congeal::dataset::{ImageStack, SyntheticSource};
use congeal::io::checkpoint::checkpoint_bytes;
use congeal::io::{parse_report, read_report, report_text, write_report, Checkpoint, Progress, Raster};
use congeal::models::ModelState;
use congeal::warp::PerturbModel;

fn short_run(epochs: usize) -> congeal::congeal::TrainOutcome {
    let src = SyntheticSource::new(template14(2), PerturbModel::Perspective { sigma: 0.1 }, 5, 12).unwrap();
    let cfg = CongealConfig {
        lr: 1e-3,
        batch: 4,
        epochs,
        code_size: 6,
        ..Default::default()
    };
    train(&src, &toy_spec(), &cfg, TrainOptions::default()).unwrap()
}

#[test]
fn reports_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut report = short_run(2).report;
    report.images.push(("mean-after".into(), "out/mean-after.pgm".into()));
    let path = dir.path().join("report.txt");
    write_report(&path, &report).unwrap();
    assert_eq!(read_report(&path).unwrap(), report);
    assert_eq!(report_text(&report), report_text(&report.clone()));

    report.apsnr_after = f64::INFINITY;
    let text = report_text(&report);
    assert!(text.contains("apsnr.after = inf\n"));
    assert_eq!(parse_report(&text).unwrap().apsnr_after, f64::INFINITY);
}

#[test]
fn zero_epoch_report_has_an_empty_loss_table() {
    let report = short_run(0).report;
    let text = report_text(&report);
    assert!(text.contains("epochs = 0\n"));
    assert!(!text.contains("epoch.1"));
    let back = parse_report(&text).unwrap();
    assert_eq!(back.apsnr_before, back.apsnr_after);
}

#[test]
fn malformed_reports_are_rejected() {
    let text = report_text(&short_run(1).report);
    assert!(parse_report(&text.replace("params = 12", "params = 13")).is_err());
    assert!(parse_report(&text.replace("epochs = 1", "epochs = 2")).is_err());
    assert!(parse_report("method congeal\n").is_err());
}

#[test]
fn fresh_and_trained_checkpoints_round_trip_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let fresh = Checkpoint {
        config: CongealConfig::default(),
        model: ModelState::new(&toy_spec(), 1).unwrap(),
        reference: template14(0),
        progress: Progress::new(0),
    };
    let path = dir.path().join("fresh.ckpt");
    fresh.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), fresh);

    let run = short_run(2);
    let trained = Checkpoint {
        config: CongealConfig {
            lr: 1e-3,
            batch: 4,
            epochs: 2,
            code_size: 6,
            ..Default::default()
        },
        model: run.model,
        reference: run.reference,
        progress: run.progress,
    };
    let bytes = checkpoint_bytes(&trained.config, &trained.model, &trained.reference, &trained.progress).unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, trained);
    assert_eq!(
        checkpoint_bytes(&back.config, &back.model, &back.reference, &back.progress).unwrap(),
        bytes
    );
}

#[test]
fn corrupted_checkpoints_never_load() {
    let run = short_run(1);
    let cfg = CongealConfig {
        lr: 1e-3,
        batch: 4,
        epochs: 1,
        code_size: 6,
        ..Default::default()
    };
    let bytes = checkpoint_bytes(&cfg, &run.model, &run.reference, &run.progress).unwrap();
    for at in (0..bytes.len()).step_by(bytes.len() / 97 + 1) {
        let mut bad = bytes.clone();
        bad[at] ^= 0x40;
        assert!(Checkpoint::from_bytes(&bad).is_err(), "flip at {at} loaded");
    }
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
}

#[test]
fn image_writers_are_deterministic() {
    let src = SyntheticSource::new(template14(1), PerturbModel::Perspective { sigma: 0.1 }, 2, 3).unwrap();
    let stack = ImageStack::from_source(&src).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.idx"), dir.path().join("b.idx"));
    congeal::io::write_idx_images(&a, &stack).unwrap();
    congeal::io::write_idx_images(&b, &stack).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let g = congeal::io::grid(stack.images(), (1, 14, 14)).unwrap();
    let p = dir.path().join("g.pgm");
    g.write(&p).unwrap();
    assert_eq!(Raster::read(&p).unwrap(), g);
    assert_eq!(std::fs::read(&p).unwrap(), g.to_bytes());
}
