use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input: malformed files, unknown labels, invalid configuration.
    Validation,
    /// Numeric or runtime failure while computing.
    Runtime,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error in record {record}: {message}")]
    Format { record: usize, message: String },

    #[error("label error in record {record}: {message}")]
    Label { record: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },

    #[error("degenerate mask: every entry of a softmax row is masked")]
    DegenerateMask,

    #[error("empty sequence passed to {0}")]
    EmptySequence(&'static str),

    #[error("token id {id} outside vocabulary of size {size}")]
    TokenId { id: usize, size: usize },

    #[error("graph contract violated: {0}")]
    Graph(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("config error for key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint version error: expected header {expected:?}, found {found:?}")]
    Version { expected: String, found: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Format { .. }
            | Error::Label { .. }
            | Error::Validation(_)
            | Error::Config { .. }
            | Error::Checkpoint(_)
            | Error::Version { .. }
            | Error::Io { .. } => ErrorClass::Validation,
            Error::Shape { .. }
            | Error::DegenerateMask
            | Error::EmptySequence(_)
            | Error::TokenId { .. }
            | Error::Graph(_)
            | Error::NonFinite(_) => ErrorClass::Runtime,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
