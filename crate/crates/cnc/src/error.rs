//! Crate-wide error type and exit-code mapping.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("mask error: {0}")]
    Mask(String),
    #[error("size limit exceeded: {0}")]
    Size(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 1 usage/config, 2 I/O, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dim(_)
            | Error::Label(_)
            | Error::Config(_)
            | Error::Input(_)
            | Error::Empty(_)
            | Error::Mask(_)
            | Error::Size(_) => 1,
            Error::Parse { .. } | Error::Io(_) => 2,
            Error::Numeric(_) => 3,
        }
    }
}
