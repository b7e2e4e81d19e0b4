use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the simulator, dataset, policy, runtime and training code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range {lo}..={hi}")]
    OutOfRange { index: usize, lo: usize, hi: usize },

    #[error("invalid phase label {0}")]
    InvalidPhase(i64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("chunk issued at step {got} does not follow step {last}")]
    NonMonotonicChunk { last: i64, got: i64 },

    #[error("no active chunk covers step {0}")]
    NoAction(i64),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
