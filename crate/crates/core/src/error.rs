//! Error type shared across the crate.

use std::fmt;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Operand shapes do not line up for the requested operation.
    Shape(String),
    /// An operation produced a NaN or infinite value.
    NonFinite(String),
    /// Invalid input to an operation (bad label, empty dataset, ...).
    Input(String),
    /// Inconsistent configuration.
    Config(String),
    /// Checkpoint file malformed or shape-incompatible.
    Checkpoint(String),
    /// Training aborted (NaN loss or gradients).
    Diverged(String),
    Io(String),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::Shape(m) => write!(f, "shape error: {m}"),
            CoreError::NonFinite(m) => write!(f, "non-finite value: {m}"),
            CoreError::Input(m) => write!(f, "input error: {m}"),
            CoreError::Config(m) => write!(f, "config error: {m}"),
            CoreError::Checkpoint(m) => write!(f, "checkpoint error: {m}"),
            CoreError::Diverged(m) => write!(f, "diverged: {m}"),
            CoreError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for CoreError {}

impl From<std::io::Error> for CoreError {
    fn from(e: std::io::Error) -> Self {
        CoreError::Io(e.to_string())
    }
}
