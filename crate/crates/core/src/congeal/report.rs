use crate::metrics::StackStats;
use crate::warp::WarpParams;

/// Mean loss components of one epoch and the probe APSNR after it.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean of the optimised objective.
    pub total: f64,
    /// `None` when the term is switched off.
    pub distortion: Option<f64>,
    pub reconstruction: Option<f64>,
    pub penalty: Option<f64>,
    pub probe_apsnr: f64,
}

/// Outcome of a congealing (or baseline) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    /// `congeal`, `lsc`, or an ablation arm name.
    pub method: String,
    /// Fully resolved configuration as `key = value` pairs.
    pub config: Vec<(String, String)>,
    pub n: usize,
    pub dims: (usize, usize, usize),
    pub epochs: Vec<EpochStats>,
    pub apsnr_before: f64,
    pub apsnr_after: f64,
    pub before: StackStats,
    pub after: StackStats,
    /// Final corner displacements of every image, in dataset order.
    pub params: Vec<WarpParams>,
    /// Mean area of the warped frame relative to the frame, over all
    /// non-reference images.
    pub mean_area_ratio: f64,
    /// Residual updates dropped as degenerate during the final pass.
    pub flagged: usize,
    pub stopped_early: bool,
    /// Emitted files as `(label, path)`.
    pub images: Vec<(String, String)>,
    pub wall_clock_s: f64,
}

impl RunReport {
    pub fn apsnr_gain(&self) -> f64 {
        self.apsnr_after - self.apsnr_before
    }

    /// Mean total loss of every epoch, in order.
    pub fn loss_curve(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.total).collect()
    }
}
