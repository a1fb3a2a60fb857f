use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("{op}: {msg}")]
    InvalidOp { op: &'static str, msg: String },

    #[error("backward: {0}")]
    Backward(String),

    #[error("vocabulary: {0}")]
    Vocab(String),

    #[error("universal label: {0}")]
    Label(String),

    #[error("completion of sample {sample}: {msg}")]
    Completion { sample: String, msg: String },

    #[error("manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },

    #[error("feature file {path}: {msg}")]
    Feature { path: PathBuf, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("training aborted at step {step} (batch {batch}): {msg}")]
    Training {
        step: usize,
        batch: String,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidOp {
            op,
            msg: msg.into(),
        }
    }
}
