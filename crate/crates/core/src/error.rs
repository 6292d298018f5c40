use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration value, flag, or predicate.
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor shape mismatch or unsupported dimensions.
    #[error("shape error: {0}")]
    Shape(String),

    /// Data failed a type invariant (bounds, binary values, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Non-finite loss, failed gradient check, or other numeric breakdown.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Malformed or incompatible checkpoint / tensor container.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), message: message.into() }
    }

    /// Process exit code contract: 0 success, 2 config error, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Validation(_) => 2,
            Error::Numeric(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
