use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors surfaced by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (bad dimensions, unsorted input, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("backend `{backend}` failed: {message}")]
    Backend { backend: &'static str, message: String },

    #[error("invalid state: {0}")]
    State(String),

    /// Stored bytes did not pass framing or checksum validation.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn backend(backend: &'static str, msg: impl Into<String>) -> Self {
        Error::Backend {
            backend,
            message: msg.into(),
        }
    }

    /// Process exit status for the `kaf` binary: 1 I/O, 2 config, 3 contract.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Io(_) | Error::Integrity(_) => 1,
            Error::Config(_) | Error::Json(_) => 2,
            Error::Contract(_) | Error::State(_) | Error::Backend { .. } => 3,
        }
    }
}
