use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the engine.
///
/// The variants are grouped so that callers (the CLI in particular) can map
/// them onto distinct exit statuses: configuration, data, numerical failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid media instance `{id}`: {reason}")]
    InvalidInstance { id: String, reason: String },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("quadruplet sampling infeasible: {0}")]
    Infeasible(String),

    #[error("malformed quadruplet: {0}")]
    MalformedQuadruplet(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("inconsistent relevance input: {0}")]
    Relevance(String),

    #[error("empty query set for task {0}")]
    EmptyQuerySet(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("corrupt or incompatible file: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] std::io::Error),

    #[error("image decode: {0}")]
    Image(#[from] image::ImageError),

    #[error("audio decode: {0}")]
    Audio(#[from] hound::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse classification used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Shape(_) => ErrorKind::Config,
            Error::Numerical(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
