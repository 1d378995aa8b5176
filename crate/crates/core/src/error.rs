//! Error types shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violates an operation precondition (empty waveform, too-short
    /// signal, single-class score set, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Audio container is readable but not in a supported layout
    /// (wrong channel count, sample rate, or bit depth).
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    /// Filesystem failure, with the path that triggered it.
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed line in a protocol, trial, or score file.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Invalid model or run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A numeric operation left its defined domain (zero-norm embedding,
    /// non-finite value where finiteness is an invariant).
    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    /// Frontend adapter failure: unknown adapter name or checkpoint that
    /// does not match the adapter's shape contract.
    #[error("adapter error: {0}")]
    Adapter(String),

    /// An API contract was violated by the caller, e.g. passing an
    /// unfrozen extractor where a frozen one is required.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Corrupt or incompatible checkpoint container.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Internal shape invariant broke mid-forward; always a bug.
    #[error("shape mismatch in {location}: expected {expected}, got {actual}")]
    ShapeMismatch {
        location: String,
        expected: String,
        actual: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
