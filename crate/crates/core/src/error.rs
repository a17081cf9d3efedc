use std::path::PathBuf;

use thiserror::Error;

use crate::slide::Rect;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("tile not found: {0}")]
    TileNotFound(PathBuf),

    #[error(
        "tile {path} is {actual_w}x{actual_h}, manifest layout expects {expected_w}x{expected_h}"
    )]
    TileDimensions {
        path: PathBuf,
        expected_w: u32,
        expected_h: u32,
        actual_w: u32,
        actual_h: u32,
    },

    #[error("tile layout: {0}")]
    TileLayout(String),

    #[error("png {path}: {reason}")]
    Png { path: PathBuf, reason: String },

    #[error("region {rect:?} outside {width}x{height}")]
    OutOfBounds { rect: Rect, width: u32, height: u32 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("duplicate slide id {0:?}")]
    DuplicateSlideId(String),

    #[error("both classes are required (got only {0})")]
    SingleClass(&'static str),

    #[error("brute-force search space {placements} exceeds guard {guard}")]
    GuardExceeded { placements: u64, guard: u64 },

    #[error("segmenter backend: {0}")]
    Backend(String),

    #[error("slide {slide_id}, patch at ({x},{y}): {source}")]
    Patch {
        slide_id: String,
        x: u32,
        y: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("slide {slide_id}: {source}")]
    Slide {
        slide_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("json {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn manifest(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Manifest {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn png(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Png {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}
