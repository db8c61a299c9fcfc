use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left_h}x{left_w} vs {right_h}x{right_w}")]
    DimensionMismatch {
        left_h: u32,
        left_w: u32,
        right_h: u32,
        right_w: u32,
    },

    #[error("invalid run-length encoding: {0}")]
    InvalidRle(String),

    #[error("mask is empty")]
    EmptyMask,

    #[error("point ({x}, {y}) is outside the {width}x{height} image")]
    PointOutOfBounds { x: u32, y: u32, width: u32, height: u32 },

    #[error("invalid bounding box {0:?}")]
    InvalidBBox([u32; 4]),

    #[error("invalid feature grid: {0}")]
    InvalidGrid(String),

    #[error("patch {index} (row {row}, col {col}) has a zero or non-finite feature vector")]
    ZeroNormPatch { index: usize, row: usize, col: usize },

    #[error("patch index {index} out of range for {n} patches")]
    PatchOutOfRange { index: usize, n: usize },

    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("degenerate eigenvector: no split possible")]
    DegenerateEigenvector,

    #[error("mask too small to conquer: {patches} patch(es) inside the mask")]
    MaskTooSmall { patches: usize },

    #[error("threshold ladder must be strictly decreasing with values in (0, 1): {0:?}")]
    InvalidLadder(Vec<f64>),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("image id mismatch: `{left}` vs `{right}`")]
    ImageIdMismatch { left: String, right: String },

    #[error("image ids without a counterpart: {0:?}")]
    UnmatchedImages(Vec<String>),

    #[error("duplicate mask id {0}")]
    DuplicateMaskId(u64),

    #[error("{path}: bad magic {found:?}, expected \"UFG1\"")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("{path}: truncated payload, expected {expected} bytes, found {found}")]
    TruncatedPayload {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}: {found} trailing bytes after payload")]
    TrailingBytes { path: PathBuf, found: usize },

    #[error("{path}: non-finite value at float index {index}")]
    NonFiniteFeature { path: PathBuf, index: usize },

    #[error("{path}: schema error at {pointer}: {message}")]
    Schema {
        path: PathBuf,
        pointer: String,
        message: String,
    },

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

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

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
