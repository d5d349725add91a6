//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by datasets, indexes, the engine simulator and runs.
#[derive(Debug, Error)]
pub enum SaxError {
    /// An argument violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// An operation was applied to an object in the wrong state.
    #[error("invalid state: {0}")]
    InvalidState(String),
    /// A configuration is internally inconsistent or unusable.
    #[error("config error: {0}")]
    Config(String),
    /// A file did not match the expected binary or JSON layout.
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SaxError>;

impl SaxError {
    pub fn invalid_input(msg: impl Into<String>) -> Self {
        SaxError::InvalidInput(msg.into())
    }

    pub fn invalid_state(msg: impl Into<String>) -> Self {
        SaxError::InvalidState(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        SaxError::Config(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        SaxError::Format(msg.into())
    }
}
