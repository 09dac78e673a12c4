use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {value}")]
    InvalidParameter { field: String, value: String },

    #[error("parse error in {source_name} at byte {offset}: {message}")]
    Parse {
        source_name: String,
        offset: usize,
        message: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("stage mismatch: expected {expected}, got {actual}")]
    Stage {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("non-finite state at step {step}")]
    Diverged { step: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(field: &str, value: impl ToString) -> Self {
        Error::InvalidParameter {
            field: field.to_string(),
            value: value.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
