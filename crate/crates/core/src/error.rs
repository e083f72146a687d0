//! Error types shared across the engine.

use thiserror::Error;

/// Errors raised by the inference protocol layer (client, mock, server).
///
/// The three backend failure classes stay distinguishable so callers can
/// decide whether a retry makes sense.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProtocolError {
    /// Connection refused, timeout, reset. Safe to retry.
    #[error("transport failure: {0}")]
    Transport(String),
    /// The peer answered but the body did not match the wire schema.
    #[error("malformed response: {0}")]
    Malformed(String),
    /// The backend understood the request and declined it.
    #[error("backend error: {0}")]
    Backend(String),
    /// The request violates a protocol invariant and was never sent.
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl ProtocolError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProtocolError::Transport(_))
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty video: no frames to sample")]
    EmptyVideo,

    #[error("histogram layout mismatch: {left} vs {right} bins")]
    HistogramMismatch { left: usize, right: usize },

    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero-norm embedding for document {0}")]
    ZeroNorm(String),

    #[error("duplicate document id: {0}")]
    DuplicateDocId(String),

    #[error("index format error: {0}")]
    IndexFormat(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("empty model output at {step} step")]
    EmptyOutput { step: &'static str },

    #[error("no drafts: all {0} draft chains failed")]
    NoDrafts(usize),

    #[error(transparent)]
    Protocol(#[from] ProtocolError),

    #[error("image error: {0}")]
    Image(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Image(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
