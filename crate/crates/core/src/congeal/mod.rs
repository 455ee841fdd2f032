//! The congealing objective, the training loop and amortised inference.

pub mod ablate;
pub mod config;
pub mod loss;
pub mod report;
pub mod train;

pub use ablate::{ablate, arm_configs, Ablation};
pub use config::{CongealConfig, Normalisation, Terms};
pub use loss::{complexity_loss, distortion_loss, total_loss, Complexity, Losses};
pub use report::{EpochStats, RunReport};
pub use train::{align_source, infer_align, mean_area_ratio, train, Alignment, TrainOptions, TrainOutcome};
