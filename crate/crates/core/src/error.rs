use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("vector length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("voxel {voxel} is not positive definite (smallest eigenvalue {eigenvalue:e})")]
    NotPositiveDefinite { voxel: usize, eigenvalue: f64 },

    #[error("voxel file {path}: {reason}")]
    VoxelFile { path: PathBuf, reason: String },

    #[error("{context}: {source}")]
    Solver {
        context: String,
        #[source]
        source: crate::krylov::SolverError,
    },

    #[error("matrix is not symmetric (asymmetry {asymmetry:e} relative)")]
    Asymmetric { asymmetry: f64 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document: {0}")]
    Parse(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
