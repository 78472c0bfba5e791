use std::fmt;

/// Library error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn dim(msg: impl fmt::Display) -> Self {
        Error::Dimension(msg.to_string())
    }

    pub fn invalid(msg: impl fmt::Display) -> Self {
        Error::Validation(msg.to_string())
    }

    pub fn numerical(msg: impl fmt::Display) -> Self {
        Error::Numerical(msg.to_string())
    }

    /// Process exit code used by the CLI: 1 for input problems, 2 for numerical ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) => 2,
            _ => 1,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(format!("line {} column {}: {}", e.line(), e.column(), e))
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse(format!("{other:?}")),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
