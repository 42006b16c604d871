use std::io;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("operator fingerprint mismatch: expected {expected:016x}, got {found:016x}")]
    FingerprintMismatch { expected: u64, found: u64 },

    #[error("tape already consumed by a backward pass")]
    TapeConsumed,

    #[error("tape memory cap exceeded: {needed} bytes requested, cap is {cap} bytes")]
    TapeMemory { needed: usize, cap: usize },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
