use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs} vs {rhs}")]
    Shape {
        op: &'static str,
        lhs: String,
        rhs: String,
    },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("numerical gradient oracle: non-finite function value at coordinate {index}")]
    Oracle { index: usize },
    #[error("non-finite {what} in `{name}`")]
    NonFinite { what: &'static str, name: String },
    #[error("non-finite loss in batch {batch}")]
    NonFiniteLoss { batch: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("dataset is empty after {0}")]
    EmptyDataset(&'static str),
    #[error("invalid model configuration: {0}")]
    Model(String),
    #[error("invalid config value for `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("checkpoint: bad magic")]
    BadMagic,
    #[error("checkpoint: unsupported format version {0}")]
    Version(u32),
    #[error("checkpoint: truncated {0}")]
    Truncated(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: impl std::fmt::Debug, rhs: impl std::fmt::Debug) -> Self {
        Error::Shape {
            op,
            lhs: format!("{lhs:?}"),
            rhs: format!("{rhs:?}"),
        }
    }
}
