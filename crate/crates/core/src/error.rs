//! Error type shared across the toolkit.

use thiserror::Error;

/// Errors produced by any toolkit operation.
#[derive(Debug, Error)]
pub enum Error {
    /// Matrix/vector shapes do not conform.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Input outside the operation's domain (NaN input, label out of range).
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid parameter value (noise scale, dropout rate, grid, config).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A coordinate left the [0,1] range the sensitivity bound relies on;
    /// normalization must run before perturbation.
    #[error("sensitivity violation: {0}")]
    SensitivityViolation(String),

    /// Training produced a non-finite loss or gradient.
    #[error("training divergence: {0}")]
    Divergence(String),

    /// Malformed or inconsistent serialized data.
    #[error("schema error at line {line}: {msg}")]
    Schema { line: usize, msg: String },

    /// A probe task whose label set has a single class.
    #[error("degenerate task: {0}")]
    DegenerateTask(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn schema(line: usize, msg: impl Into<String>) -> Self {
        Error::Schema {
            line,
            msg: msg.into(),
        }
    }
}
