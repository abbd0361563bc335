use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad IDX magic, expected {expected} got {actual}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        actual: u32,
    },

    #[error("IDX format error: {0}")]
    Format(String),

    #[error("invalid label permutation: {0}")]
    Permutation(String),

    #[error("unsupported shift schedule: {0}")]
    Schedule(String),

    #[error("config line {line}: `{key}`: {message}")]
    Config {
        line: usize,
        key: String,
        message: String,
    },

    #[error("plot: {0}")]
    Plot(String),

    #[error("replicate aborted at presentation {presentation}: {reason}")]
    ReplicateAborted { presentation: u64, reason: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
