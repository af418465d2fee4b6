use std::io;

use thiserror::Error;

pub type Result<T, E = IkeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum IkeError {
    /// Invalid or inconsistent parameters (psi out of range, dimension mismatch, ...).
    #[error("parameter error: {0}")]
    Param(String),
    /// A value does not fit the code layout, or two codes disagree on (t, n_b).
    #[error("encoding error: {0}")]
    Encoding(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    /// Malformed file contents: bad magic, unsupported version, truncated payload.
    #[error("format error: {0}")]
    Format(String),
    #[error("evaluation error: {0}")]
    Eval(String),
}

impl IkeError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        IkeError::Param(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        IkeError::Format(msg.into())
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            IkeError::Param(_) => 2,
            IkeError::Io(_) => 3,
            IkeError::Format(_) | IkeError::Encoding(_) | IkeError::Eval(_) => 4,
        }
    }
}
