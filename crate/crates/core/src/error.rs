//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("estimation failed: {0}")]
    EstimationFailed(String),
    #[error("no placement candidates for scan {0}")]
    NoCandidates(String),
    #[error("input too small: {0}")]
    TooSmallInput(String),
    #[error("scene generation failed: {0}")]
    GenerationFailed(String),
    #[error("model too large for exhaustive enumeration: {0} assignments")]
    ModelTooLarge(u64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
