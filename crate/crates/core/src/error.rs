use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("matrix of dimension {dim} is not positive definite")]
    NotPositiveDefinite { dim: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("all eigenvalue estimates are equal; no eigengap to select a rank from")]
    DegenerateSpectrum,

    #[error("rank {rank} out of range 1..={dim}")]
    RankOutOfRange { rank: usize, dim: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty arm set")]
    EmptyArmSet,

    #[error("context {index} has norm {norm} > 1")]
    ContextNorm { index: usize, norm: f64 },

    #[error("parse error in {file}:{line}: {msg}")]
    Parse {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("unknown genre {genre:?} in {file}:{line}")]
    MissingGenre {
        genre: String,
        file: PathBuf,
        line: usize,
    },

    #[error("empty group: {0}")]
    EmptyGroup(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
