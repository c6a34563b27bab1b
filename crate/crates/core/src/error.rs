//! Crate-wide error type.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the forecasting engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or matrix shapes are incompatible with the requested operation.
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        actual: String,
    },

    /// An operation produced NaN or Inf.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    /// The value passed to `backward` is not a scalar.
    #[error("backward requires a scalar loss of shape [1], got shape {0:?}")]
    LossNotScalar(Vec<usize>),

    /// The value passed to `backward` was never recorded on the active tape.
    #[error("loss did not record a computation tape (no tracked inputs?)")]
    LossNotOnTape,

    /// Hierarchy construction failed.
    #[error("invalid hierarchy: {0}")]
    Hierarchy(String),

    /// Data file parsing or validation failed.
    #[error("data error: {0}")]
    Data(String),

    /// Configuration values are out of range or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// Training loss became non-finite.
    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    /// A metric is undefined for the given inputs.
    #[error("metric error: {0}")]
    Metric(String),

    /// Checkpoint file is malformed or from an unsupported version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
