use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("query time {query} outside trajectory span [{start}, {end}]")]
    OutOfRange { query: f64, start: f64, end: f64 },

    #[error("rotation angle {angle} rad is too close to pi for a unique logarithm")]
    NearPiRotation { angle: f64 },

    #[error("{path}: parse error at {location}: {message}")]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("{path}: schema error: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("trajectory timestamps are not strictly increasing at row {row} ({prev} -> {next})")]
    NonMonotonicTimestamps { row: usize, prev: f64, next: f64 },

    #[error("quaternion at row {row} has norm {norm}, outside [0.99, 1.01]")]
    InvalidQuaternion { row: usize, norm: f64 },

    #[error("{found} fiducial points given, at least 3 are required")]
    TooFewFiducials { found: usize },

    #[error("no LiDAR frame falls inside the trajectory span ({dropped} dropped)")]
    EmptyOverlap { dropped: usize },

    #[error("point set is degenerate (second eigenvalue {lambda2:e})")]
    DegenerateSet { lambda2: f64 },

    #[error("only {found} correspondences, at least {required} required")]
    InsufficientCorrespondences { found: usize, required: usize },

    #[error("normal equations are singular (condition number {condition:e})")]
    SingularHessian { condition: f64 },

    #[error("no fiducial found a map point within the search radius")]
    AllUnmatched,

    #[error("stage `{stage}` failed: {reason}")]
    StageFailed { stage: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

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

    pub(crate) fn parse(
        path: impl Into<PathBuf>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            path: path.into(),
            location: location.into(),
            message: message.into(),
        }
    }
}
