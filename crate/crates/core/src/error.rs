use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are incompatible for the requested operation.
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A precondition on the arguments of an operation does not hold.
    #[error("{op}: {detail}")]
    Contract { op: &'static str, detail: String },

    #[error("invalid model config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("unsupported image {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("dataset: {0}")]
    Dataset(String),

    /// Training produced a non-finite loss.
    #[error("non-finite loss {loss} at iteration {iteration} (lr {lr:e}, batch {batch_id})")]
    NonFinite {
        iteration: u64,
        lr: f64,
        batch_id: u64,
        loss: f64,
    },

    #[error("internal: {0}")]
    Internal(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
