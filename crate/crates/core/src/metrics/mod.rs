//! Alignment quality: APSNR, per-pixel stack statistics and landmark error.

pub mod apsnr;
pub mod landmarks;
pub mod stats;

pub use apsnr::{apsnr, apsnr_of};
pub use landmarks::{landmark_error, LandmarkError, LandmarkSet};
pub use stats::{stack_stats, StackStats};
