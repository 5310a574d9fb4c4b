use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed file: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error(
        "checksum mismatch in weight payload at byte offset {offset} (tensor `{tensor}`): \
         expected {expected:#010x}, found {actual:#010x}"
    )]
    Checksum {
        offset: u64,
        tensor: String,
        expected: u32,
        actual: u32,
    },

    #[error("unknown layer kind `{0}`")]
    UnknownLayer(String),

    #[error("layer {layer}: {reason}")]
    Shape { layer: usize, reason: String },

    #[error("prior evaluation failed: {0}")]
    Prior(String),

    #[error("non-finite values in {stage} at iteration {iteration}")]
    NonFinite {
        stage: &'static str,
        iteration: usize,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
