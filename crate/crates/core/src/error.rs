use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or hyperparameters that are inconsistent with each other.
    #[error("configuration error: {0}")]
    Config(String),
    /// An operation was called outside of its contract (bad time index, empty window, ...).
    #[error("usage error: {0}")]
    Usage(String),
    /// A value outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Training or inference produced a non-finite quantity.
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
