//! Full-scale encoder-decoder retinal vessel segmentation.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: dense tensors and a tape-based reverse-mode autodiff engine.
//! * [`model`]: network blocks, the full network, complexity accounting and checkpoints.
//! * [`postprocess`]: sigmoid smoothing and the ratio-driven adaptive threshold search.
//! * [`metrics`]: confusion counts, scalar metrics and exact ROC AUC.
//! * [`data`]: dataset ingestion, preprocessing, augmentation and split conventions.
//! * [`train`]: BCE loss, Adam, and the train / evaluate / cross / ablate drivers.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod grid;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod postprocess;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
