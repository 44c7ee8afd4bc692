use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("transport error on {endpoint} after {attempts} attempt(s) (retryable: {retryable}): {message}")]
    Transport {
        endpoint: String,
        attempts: u32,
        retryable: bool,
        message: String,
    },

    #[error("missing cached {kind} for image {image}")]
    MissingFeature { kind: &'static str, image: String },

    #[error("invalid feature: {0}")]
    InvalidFeature(String),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid transform record: {0}")]
    InvalidRecord(String),

    #[error("pipeline error: {0}")]
    Pipeline(String),

    #[error("ordering error: {0}")]
    Ordering(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("parse error in {path} at record {record}: {message}")]
    Parse {
        path: PathBuf,
        record: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error: {0}")]
    Codec(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, record: usize, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            record,
            message: message.to_string(),
        }
    }

    /// Coarse category used by the command line for exit codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidInput(_)
            | Error::InvalidFeature(_)
            | Error::InvalidShape(_)
            | Error::InvalidState(_)
            | Error::InvalidRecord(_)
            | Error::Config(_) => ErrorCategory::InvalidConfig,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                ErrorCategory::MissingFile
            }
            Error::Io { .. } | Error::Parse { .. } | Error::Codec(_) => ErrorCategory::Data,
            Error::Transport { .. } | Error::MissingFeature { .. } | Error::Unsupported(_) => {
                ErrorCategory::Backend
            }
            Error::Pipeline(_) | Error::Ordering(_) => ErrorCategory::Pipeline,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    InvalidConfig,
    MissingFile,
    Data,
    Backend,
    Pipeline,
}
