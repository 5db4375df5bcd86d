use std::path::PathBuf;

use thiserror::Error;

pub type SpcorResult<T> = Result<T, SpcorError>;

#[derive(Debug, Error)]
pub enum SpcorError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad format: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: corrupt: {msg}")]
    Corrupt { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Data {
        path: PathBuf,
        #[source]
        source: spcor_core::Error,
    },
    #[error("manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
    #[error(transparent)]
    Core(#[from] spcor_core::Error),
    #[error("{0}")]
    Usage(String),
}

impl SpcorError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Self::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Self::Corrupt {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn manifest(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Self::Manifest {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn data(path: impl Into<PathBuf>, source: spcor_core::Error) -> Self {
        Self::Data {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for usage errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            _ => 1,
        }
    }
}
