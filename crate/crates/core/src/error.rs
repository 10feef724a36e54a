use std::path::PathBuf;

use thiserror::Error;

use crate::scene::Scene;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A documented precondition of a function was violated by the caller.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("non-finite loss in view {view}")]
    NonFiniteLoss { view: usize },

    /// Training produced a non-finite loss; carries the last scene whose
    /// loss was finite.
    #[error("training diverged at iteration {iteration}")]
    Diverged { iteration: usize, last_good: Box<Scene> },

    #[error("bad magic: not a checkpoint file")]
    BadMagic,

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("unknown synthetic scene '{0}'")]
    UnknownSpec(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
