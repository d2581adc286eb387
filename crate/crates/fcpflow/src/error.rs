//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the array core, flow layers, training loop, metrics,
/// and dataset handling.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not line up.
    #[error("dimension error in {op}: {detail}")]
    Dim { op: &'static str, detail: String },

    /// An input lies outside an operation's numeric domain (log of a
    /// non-positive value, division by zero, ...).
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    /// A documented precondition was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A computation produced a non-finite value.
    #[error("numeric error in {context}: non-finite value encountered")]
    NonFinite { context: String },

    /// Stateful component used before it was populated, or in the wrong mode.
    #[error("state error: {0}")]
    State(String),

    /// Invalid configuration value.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input data (CSV rows, condition specs, ...).
    #[error("parse error: {0}")]
    Parse(String),

    /// Checkpoint or manifest schema violation.
    #[error("schema error: {0}")]
    Schema(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dim { op, detail: detail.into() }
    }

    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain { op, detail: detail.into() }
    }
}
