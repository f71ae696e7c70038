//! Error type shared across the pipeline.

use std::io;
use std::path::{Path, PathBuf};

/// Errors produced by any stage of the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// I/O failure, annotated with the path that was being touched.
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    /// A line of an input file did not parse. Line numbers are 1-based.
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Invalid data that is not tied to a specific file line.
    #[error("invalid data: {0}")]
    Data(String),

    /// Invalid pipeline configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A model backend misbehaved (transport failure or malformed response).
    #[error("backend '{name}': {message}")]
    Backend { name: String, message: String },
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn parse(path: impl AsRef<Path>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.as_ref().to_path_buf(),
            line,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Error::Data(message.into())
    }

    pub fn config(message: impl Into<String>) -> Self {
        Error::Config(message.into())
    }

    pub fn backend(name: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Backend {
            name: name.into(),
            message: message.into(),
        }
    }

    /// True for transport/protocol failures of an external model backend.
    pub fn is_backend(&self) -> bool {
        matches!(self, Error::Backend { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
