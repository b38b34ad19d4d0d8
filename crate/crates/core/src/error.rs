use thiserror::Error;

use crate::world::Frame;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("command frame mismatch: expected {expected:?}, got {got:?}")]
    FrameMismatch { expected: Frame, got: Frame },

    #[error("invalid detection: {0}")]
    InvalidDetection(String),

    #[error("no active track to servo on")]
    NoTrack,

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("config validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("log error: {0}")]
    Log(String),
}

pub type Result<T> = std::result::Result<T, Error>;
