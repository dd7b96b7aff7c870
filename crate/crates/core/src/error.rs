use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no valid pixel in mask")]
    EmptyMask,

    #[error("partial depth and prediction share no valid pixel")]
    EmptyOverlap,

    #[error("rect {rect} does not fit inside a {width}x{height} frame")]
    OutOfBounds {
        rect: crate::raster::Rect,
        width: usize,
        height: usize,
    },

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("median of the valid region is zero")]
    ZeroMedian,

    #[error("scale must be finite and positive, got {0}")]
    NonPositiveScale(f64),

    #[error("distribution set has no candidate")]
    EmptyDistribution,

    #[error("noisy-oracle generator needs a ground-truth depth map")]
    OracleUnavailable,

    #[error("discriminator score {0} is outside (0, 1)")]
    ScoreOutOfRange(f64),

    #[error("scale protocol P needs a partial depth map")]
    MissingPartial,

    #[error("scale protocol M needs a ground-truth depth map")]
    MissingGroundTruth,

    #[error("degenerate rect: {0}")]
    DegenerateRect(String),

    #[error("degenerate resampling region: {0}")]
    DegenerateRegion(String),

    #[error("camera ray through pixel ({x}, {y}) hits no surface")]
    NoIntersection { x: usize, y: usize },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("bad image format in {path}: {reason}")]
    BadFormat { path: PathBuf, reason: String },

    #[error("{path}: expected {expected}-bit samples, found {found}-bit")]
    BitDepthMismatch {
        path: PathBuf,
        expected: u8,
        found: u8,
    },

    #[error("files without a counterpart: {}", .0.join(", "))]
    UnpairedFiles(Vec<String>),

    #[error("config error: {0}")]
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

    pub(crate) fn dims(expected: (usize, usize), actual: (usize, usize)) -> Self {
        Error::DimensionMismatch { expected, actual }
    }
}
