use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the toolkit.
///
/// The CLI maps [`Error::Io`] and [`Error::Format`] to exit code 2 and every
/// other variant to exit code 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("query point {index} at {point:?} lies outside the mesh (distance {distance:.3e})")]
    OutOfDomain {
        index: usize,
        point: Vec<f64>,
        distance: f64,
    },

    #[error("invalid state: {0}")]
    State(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("sizing error: {0}")]
    Sizing(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed file: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for failures caused by the filesystem or by unreadable files.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Format { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
