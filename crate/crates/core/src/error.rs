use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed or truncated file contents.
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    /// Input on which an operation has no meaningful result (silent clip, empty buffer).
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("synthesis error: {0}")]
    Synthesis(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    /// Invalid configuration value; `field` is the dotted path of the offending key.
    #[error("invalid config at `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Prefixes the message of message-carrying variants with `context`.
    pub fn context(self, context: impl std::fmt::Display) -> Self {
        match self {
            Error::Format(m) => Error::Format(format!("{context}: {m}")),
            Error::UnsupportedFormat(m) => Error::UnsupportedFormat(format!("{context}: {m}")),
            Error::Degenerate(m) => Error::Degenerate(format!("{context}: {m}")),
            Error::Shape(m) => Error::Shape(format!("{context}: {m}")),
            Error::Synthesis(m) => Error::Synthesis(format!("{context}: {m}")),
            Error::Split(m) => Error::Split(format!("{context}: {m}")),
            Error::Training(m) => Error::Training(format!("{context}: {m}")),
            Error::Evaluation(m) => Error::Evaluation(format!("{context}: {m}")),
            other => other,
        }
    }
}
