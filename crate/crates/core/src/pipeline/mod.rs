//! Data preparation: solar geometry, station records, quality control,
//! satellite tiles, dataset assembly, channel statistics, normalization,
//! and synthetic data.

pub mod dataset;
pub mod grid;
pub mod normalizer;
pub mod qc;
pub mod solar;
pub mod station;
pub mod stats;
pub mod synth;
