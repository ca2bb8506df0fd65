use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes or extents that an operation cannot accept.
    #[error("rejected input: {0}")]
    Shape(String),

    /// NaN or infinity appeared where finite values are required.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Parameters or settings that are inconsistent with each other.
    #[error("configuration error: {0}")]
    Config(String),

    /// An API was called out of order.
    #[error("usage error: {0}")]
    Usage(String),

    /// A line-oriented text file could not be parsed.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// Data failed a validation check (split leakage, label range, ...).
    #[error("validation failed: {0}")]
    Validation(String),

    /// A binary file does not start with the expected magic bytes.
    #[error("{0}: bad magic bytes")]
    BadMagic(String),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("architecture ledger hash mismatch: checkpoint was built for a different network")]
    LedgerMismatch,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
