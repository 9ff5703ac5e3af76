//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside the domain of the operation (negative variance,
    /// out-of-range probability, invalid dimension request, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Matrix or vector shapes do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A state that the model cannot represent or continue from
    /// (zero residual for the noise-variance draw, empty chain trace, ...).
    #[error("degenerate state: {0}")]
    Degenerate(String),

    /// Malformed on-disk data (ragged CSV rows, bad image header, ...).
    #[error("parse error: {0}")]
    Parse(String),

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
