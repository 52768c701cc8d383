use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("tensor `{name}` needs {needed} bytes at offset {offset} but the blob holds {available}")]
    BlobTruncated {
        name: String,
        offset: u64,
        needed: u64,
        available: u64,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("tensor `{0}` contains a non-finite value")]
    NonFinite(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid sparsity plan: {0}")]
    Plan(String),

    #[error("clustering: {0}")]
    Clustering(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("report: {0}")]
    Report(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
