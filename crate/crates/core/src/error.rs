use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the pipeline.
///
/// Variants are grouped by [`ErrorKind`] so front ends can map them onto
/// stable exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: schema violation: {message}")]
    Schema { line: usize, message: String },

    #[error("not a PE file: {0}")]
    NotPe(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot stratify: {0}")]
    Stratification(String),

    #[error("AUC undefined: {0}")]
    UndefinedAuc(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("invalid config: {0}")]
    Config(String),
}

/// Coarse classification used for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Io,
    Schema,
    Data,
    Compat,
    Usage,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::Parse { .. } | Error::Schema { .. } | Error::NotPe(_) => ErrorKind::Schema,
            Error::Stratification(_) | Error::UndefinedAuc(_) | Error::EmptyDataset(_) => {
                ErrorKind::Data
            }
            Error::Incompatible(_) | Error::Shape(_) => ErrorKind::Compat,
            Error::InvalidArgument(_) | Error::Config(_) => ErrorKind::Usage,
        }
    }
}
