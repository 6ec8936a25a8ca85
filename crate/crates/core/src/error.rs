use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied parameter is outside its documented range.
    #[error("invalid parameter: {0}")]
    Param(String),
    /// A structural precondition was violated (bounds, shapes, mismatched caches).
    #[error("contract violation: {0}")]
    Contract(String),
    /// A numeric input is outside the domain of the operation (e.g. zero-norm vectors).
    #[error("numeric domain error: {0}")]
    Domain(String),
    #[error("ingestion error in {path}: {msg}")]
    Ingest { path: PathBuf, msg: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("png encoding: {0}")]
    Png(#[from] png::EncodingError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Param(msg.into())
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
