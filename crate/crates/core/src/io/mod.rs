//! Dataset ingestion, image and report emission, checkpoints.

pub mod checkpoint;
pub mod idx;
pub mod netpbm;
pub mod report;

pub use checkpoint::{save_checkpoint, Checkpoint, Progress};
pub use idx::{read_idx_images, read_idx_labels, write_idx_images, write_idx_labels};
pub use netpbm::{grid, max_normalise, write_image, Raster};
pub use report::{parse_report, read_report, report_text, write_report};
