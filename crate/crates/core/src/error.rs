use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad classification used by front ends to pick exit codes and HTTP statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Io,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{format} format error at line {line}: {message}")]
    Format {
        format: &'static str,
        line: usize,
        message: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("no mesh node lies within {max_dist} mm of the point cloud")]
    EmptyOverlap { max_dist: f64 },

    #[error("covariance matrix is not positive definite (last jitter tried: {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },

    #[error("duplicate conditioning points at key positions {0:?}")]
    DuplicateKeys(Vec<(usize, usize)>),

    #[error("{points} points exceed the dense sampling limit of {limit}; use the reduced-rank path")]
    DenseLimit { points: usize, limit: usize },

    #[error("mesh component of {size} nodes (first node {first}) contains no key node")]
    Coverage { first: usize, size: usize },

    #[error("parameter fit failed on every restart: {diagnostics}")]
    FitFailed { diagnostics: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("t-test undefined: both batches have zero variance on axis {axis}")]
    UndefinedTest { axis: usize },

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate axis: every key point lies on the bend axis")]
    DegenerateAxis,

    #[error("no key point lies inside the selection region")]
    EmptySelection,

    #[error("linear solve did not converge after {iterations} iterations (residual {residual:e})")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::NotPositiveDefinite { .. }
            | Error::FitFailed { .. }
            | Error::Sampling(_)
            | Error::SolverDiverged { .. }
            | Error::DenseLimit { .. }
            | Error::Coverage { .. }
            | Error::DuplicateKeys(_) => ErrorKind::Numerical,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
