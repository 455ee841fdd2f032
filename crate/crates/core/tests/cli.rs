mod common;

use std::path::Path;
use std::process::{Command, Output};

use congeal::io::{read_idx_images, read_report};

fn congeal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_congeal")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = congeal(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn perturb_congeal_infer_eval_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let digits = common::data_dir().join("digits-3-7-images.idx3-ubyte");
    let p = tmp.path().join("p");
    ok(&[
        "perturb",
        "--data",
        s(&digits),
        "--n",
        "40",
        "--sigma",
        "0.1",
        "--seed",
        "3",
        "--out-dir",
        s(&p),
    ]);
    let perturbed = p.join("perturbed-images.idx3-ubyte");
    assert_eq!(read_idx_images(&perturbed).unwrap().n, 40);
    let truth = std::fs::read_to_string(p.join("truth.txt")).unwrap();
    assert_eq!(truth.lines().filter(|l| !l.starts_with('#')).count(), 40);

    let cfg = tmp.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "# small run\nnetwork = desk\nepochs = 5\nbatch = 8\nlambda = 0.1\n",
    )
    .unwrap();
    let c = tmp.path().join("c");
    let stdout = ok(&[
        "congeal",
        "--data",
        s(&perturbed),
        "--config",
        s(&cfg),
        "--epochs",
        "2",
        "--out-dir",
        s(&c),
    ]);
    assert_eq!(
        stdout.lines().filter(|l| l.starts_with("epoch=")).count(),
        2,
        "flag overrides file"
    );
    let report = read_report(&c.join("report.txt")).unwrap();
    assert_eq!((report.n, report.params.len(), report.epochs.len()), (40, 40, 2));
    for (_, img) in &report.images {
        assert!(Path::new(img).exists(), "{img}");
    }

    let i = tmp.path().join("i");
    ok(&[
        "infer",
        "--data",
        s(&perturbed),
        "--checkpoint",
        s(&c.join("model.ckpt")),
        "--out-dir",
        s(&i),
    ]);
    assert_eq!(read_idx_images(&i.join("aligned-images.idx3-ubyte")).unwrap().n, 40);

    // Identical landmarks under identity warps have no spread.
    let lm = tmp.path().join("lm.txt");
    let mut text = String::from("eyes 0 1\n");
    let mut zeros = String::new();
    for k in 0..40 {
        text.push_str(&format!("img{k} 8 10 19 10 14 20\n"));
        zeros.push_str(&format!("{k} 0 0 0 0 0 0 0 0\n"));
    }
    std::fs::write(&lm, text).unwrap();
    let params = tmp.path().join("zeros.txt");
    std::fs::write(&params, zeros).unwrap();
    let e = tmp.path().join("e");
    let out = ok(&[
        "eval",
        "--data",
        s(&i.join("aligned-images.idx3-ubyte")),
        "--landmarks",
        s(&lm),
        "--params",
        s(&params),
        "--out-dir",
        s(&e),
    ]);
    assert!(out.contains("landmark.mean = 0\n"), "{out}");
    assert!(out.contains("apsnr = "));
}

#[test]
fn bad_flags_exit_2_and_runtime_failures_exit_1() {
    assert_eq!(congeal(&["congeal", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(congeal(&["frobnicate"]).status.code(), Some(2));
    let out = congeal(&["eval", "--data", "/nonexistent/images"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "));
    let tmp = tempfile::tempdir().unwrap();
    let digits = common::data_dir().join("digits-3-7-images.idx3-ubyte");
    let out = congeal(&[
        "congeal",
        "--data",
        s(&digits),
        "--lambda=-1",
        "--out-dir",
        s(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
