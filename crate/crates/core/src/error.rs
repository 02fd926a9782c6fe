use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed sidecar {path}: {msg}")]
    Sidecar { path: PathBuf, msg: String },
    #[error("unknown unit tag `{0}`")]
    UnknownUnit(String),
    #[error("data length {actual} does not match dims {dims:?} (expected {expected})")]
    LengthMismatch {
        dims: [usize; 3],
        expected: usize,
        actual: usize,
    },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimsMismatch { left: [usize; 3], right: [usize; 3] },
    #[error("expected unit {expected}, found {found}")]
    WrongUnit {
        expected: &'static str,
        found: &'static str,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("calibration phantom has hu_bone == hu_water")]
    DegenerateCalibration,
    #[error("mask selects no voxels")]
    EmptyMask,
    #[error("voxel {index:?} is outside volume {dims:?}")]
    OutOfBounds { index: [usize; 3], dims: [usize; 3] },
    #[error("kernels have inconsistent sizes")]
    InconsistentKernels,
    #[error("matrix is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("specimen has no white voxels")]
    NoWhiteVoxels,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("least-squares system is singular")]
    Singular,
    #[error("all paired differences are zero")]
    AllDifferencesZero,
    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },
    #[error("config hash mismatch: {expected} vs {found}")]
    ConfigMismatch { expected: String, found: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            what,
            msg: msg.into(),
        }
    }
}
