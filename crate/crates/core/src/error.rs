use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("expected a mono file, found {0} channels")]
    ChannelCount(u16),
    #[error("unsupported audio encoding: {0}")]
    Format(String),
    #[error("corrupt or truncated audio file: {0}")]
    CorruptFile(String),
    #[error("value out of domain: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite numerics: {0}")]
    Numerics(String),
    #[error("invalid model file: {0}")]
    ModelFile(String),
    #[error("target signal has zero energy")]
    SilentTarget,
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("test file {0} also appears in the training set")]
    Leakage(String),
    #[error("output does not settle to a periodic steady state: {0}")]
    SteadyState(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
