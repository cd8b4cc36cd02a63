use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("numeric guard tripped at row {row}: {message}")]
    NumericGuard { row: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid file format in {path:?}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(message: impl Into<String>) -> Self {
        Error::Argument(message.into())
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::NumericGuard { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
