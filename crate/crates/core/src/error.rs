use thiserror::Error;

/// Errors raised by manifold primitives, problems and solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A precondition of an operation was not met by the caller.
    #[error("contract violation: {0}")]
    Contract(String),
    /// The problem lacks a callback the operation needs (e.g. a Hessian).
    #[error("missing capability: {0}")]
    Capability(String),
    /// Non-finite values or a runaway inner loop.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// Malformed input text.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    /// Structurally valid input with the wrong shape or version.
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// A solver error together with the trace recorded up to the failure.
#[derive(Debug, Clone)]
pub struct SolveFailure<T> {
    pub error: Error,
    pub trace: T,
}

impl<T> std::fmt::Display for SolveFailure<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl<T: std::fmt::Debug> std::error::Error for SolveFailure<T> {}
