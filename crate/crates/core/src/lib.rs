//! Hourly global horizontal irradiance (GHI) estimation from geostationary
//! satellite image time series.
//!
//! The crate covers the full working chain:
//!
//! * [`pipeline`] - station-record quality control, tile slicing, dataset
//!   construction, channel statistics and selection, normalization, and a
//!   synthetic-data generator for desk-scale verification.
//! * [`numerics`] - the dense f64 tensor type and the differentiable
//!   primitives (affine map, same-padded convolution, elementwise ops).
//! * [`rnn`] - FC-LSTM and ConvLSTM cells, multilayer unrolling over a
//!   sequence, and exact backpropagation through time.
//! * [`model`] - the full regressor: recurrent core over the slice sequence,
//!   attribute fusion, ReLU head, plus checkpoint serialization and the
//!   named input-variant matrix (`FC1`..`FC8`, `Conv1`..`Conv8`).
//! * [`training`] - MSE loss, Adam, early stopping, k-fold cross-validation.
//! * [`eval`] - RMSE / MBE / R² / Pearson r and per-station reporting.
//! * [`reconstruct`] - grid-wide hourly estimation and energy integration.
//! * [`manifest`] - auditable run manifests for the CLI.

mod binio;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod reconstruct;
pub mod rnn;
pub mod training;

pub use error::{Error, Result};
pub use numerics::Tensor;

/// Crate version, embedded in run manifests and checkpoints.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
