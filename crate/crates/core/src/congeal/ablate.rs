//! Paired runs that switch individual loss terms off.

use std::io::Write;

use super::config::{CongealConfig, Terms};
use super::report::RunReport;
use super::train::{train, TrainOptions};
use crate::dataset::ImageSource;
use crate::error::Result;
use crate::models::NetworkSpec;

/// Reports of the three arms, all seeded identically.
#[derive(Debug, Clone)]
pub struct Ablation {
    /// Distortion only (`lambda = 0`).
    pub d_only: RunReport,
    /// Complexity only; the distortion term is dropped.
    pub c_only: RunReport,
    pub both: RunReport,
}

impl Ablation {
    pub fn arms(&self) -> [(&'static str, &RunReport); 3] {
        [("d-only", &self.d_only), ("c-only", &self.c_only), ("both", &self.both)]
    }
}

/// Arm configurations derived from `cfg`: `(name, config)` for D-only,
/// C-only and both, in that order.
pub fn arm_configs(cfg: &CongealConfig) -> [(&'static str, CongealConfig); 3] {
    let d_only = CongealConfig {
        lambda: 0.0,
        terms: Terms::Both,
        ..cfg.clone()
    };
    let c_only = CongealConfig {
        terms: Terms::ComplexityOnly,
        ..cfg.clone()
    };
    let both = CongealConfig {
        terms: Terms::Both,
        ..cfg.clone()
    };
    [("d-only", d_only), ("c-only", c_only), ("both", both)]
}

/// Trains the three arms in turn. Progress lines are prefixed with the arm.
pub fn ablate(
    source: &dyn ImageSource,
    spec: &NetworkSpec,
    cfg: &CongealConfig,
    mut progress: Option<&mut dyn Write>,
) -> Result<Ablation> {
    let mut reports = Vec::with_capacity(3);
    for (name, arm) in arm_configs(cfg) {
        let mut buf = Vec::new();
        let mut report = train(
            source,
            spec,
            &arm,
            TrainOptions {
                progress: Some(&mut buf),
                ..Default::default()
            },
        )?
        .report;
        if let Some(out) = progress.as_mut() {
            for line in String::from_utf8_lossy(&buf).lines() {
                let _ = writeln!(out, "arm={name} {line}");
            }
        }
        report.method = format!("congeal/{name}");
        reports.push(report);
    }
    let both = reports.pop().unwrap();
    let c_only = reports.pop().unwrap();
    let d_only = reports.pop().unwrap();
    Ok(Ablation { d_only, c_only, both })
}
