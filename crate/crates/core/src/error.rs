use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] io::Error),

    #[error("format: {0}")]
    Format(String),

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("unsupported version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("schedule: {0}")]
    Schedule(String),

    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },

    #[error("event {index}: {msg}")]
    Event { index: usize, msg: String },

    #[error("unknown channel label {0:?}")]
    UnknownChannel(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: String, got: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    NonFiniteLoss { epoch: usize },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("connection lost after {frames} frames: {msg}")]
    ConnectionLost { frames: u64, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
