use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Structured text (JSON) that does not parse or lacks a field.
    #[error("parse error: {0}")]
    Parse(String),
    /// Binary payload with a bad magic number, truncation or corruption.
    #[error("format error: {0}")]
    Format(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("architecture mismatch: {0}")]
    Architecture(String),
    #[error("training diverged: {0}")]
    Diverged(String),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Short machine-readable tag for the error kind.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse(_) => "parse",
            Error::Format(_) => "format",
            Error::Shape(_) => "shape",
            Error::Invalid(_) => "invalid",
            Error::Architecture(_) => "architecture",
            Error::Diverged(_) => "diverged",
        }
    }
}
