//! Unsupervised joint alignment of image collections. An aligner network
//! predicts a homography per image that brings it onto a fixed reference,
//! trained against an L1 distortion plus the reconstruction error of a
//! small autoencoder whose code is penalised position by position.

pub mod autodiff;
pub mod cli;
pub mod congeal;
pub mod dataset;
pub mod error;
pub mod io;
pub mod lsc;
pub mod metrics;
pub mod models;
pub mod warp;

pub use error::{Error, Result};
