//! Crate-wide error type.
//!
//! Everything fallible in the crate returns [`Result`]. The CLI maps these
//! variants onto process exit codes, so which variant a failure lands in is
//! part of the public contract: configuration and shape mistakes are
//! [`Error::Config`] / [`Error::Dimension`], malformed or inconsistent data
//! is [`Error::Input`] / [`Error::Format`] / [`Error::Gap`] /
//! [`Error::Bounds`] / [`Error::Coverage`], and a training run that blows up
//! numerically is [`Error::Divergence`].

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Invalid configuration (bad variant name, zero layers, …).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Input data violates a documented precondition.
    #[error("invalid input: {0}")]
    Input(String),

    /// An API was used out of order (step before init, …).
    #[error("invalid state: {0}")]
    State(String),

    /// A binary or text artifact failed to parse. `offset` is the byte
    /// position at which decoding stopped.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// A sample or grid sequence has a hole where a timestep was required.
    #[error("gap in sequence: {0}")]
    Gap(String),

    /// A coordinate fell outside the covered domain.
    #[error("out of bounds: {0}")]
    Bounds(String),

    /// An integration period is missing required hourly inputs.
    #[error("incomplete coverage: {0}")]
    Coverage(String),

    /// Training produced a non-finite loss or parameter.
    #[error("training diverged at epoch {epoch}: {message}")]
    Divergence { epoch: usize, message: String },

    /// A metric is undefined for the given data (empty input, zero
    /// variance, …). Callers must handle this rather than receive NaN.
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code the CLI uses for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Dimension(_) => 2,
            Error::Divergence { .. } => 4,
            _ => 3,
        }
    }

    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Config(_) => "config",
            Error::Input(_) => "input",
            Error::State(_) => "state",
            Error::Format { .. } => "format",
            Error::Gap(_) => "gap",
            Error::Bounds(_) => "bounds",
            Error::Coverage(_) => "coverage",
            Error::Divergence { .. } => "divergence",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::Io(_) => "io",
        }
    }
}
