use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid level truncation d={0}; need d >= 2")]
    InvalidTruncation(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid device: {0}")]
    InvalidDevice(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("operator is not Hermitian (max deviation {0:e})")]
    NonHermitian(f64),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    #[error("confusion matrix is singular")]
    SingularConfusion,

    #[error("degenerate LDA projector: {0}")]
    DegenerateProjector(String),

    #[error("no samples left after filtering for classes {0:?}")]
    EmptyClasses(Vec<u8>),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("bad IDX file {path}: {reason}")]
    Idx { path: PathBuf, reason: String },

    #[error("count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("unsupported task: {0}")]
    UnsupportedTask(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
