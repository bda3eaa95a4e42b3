use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the segmentation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: u32,
        left_h: u32,
        right_w: u32,
        right_h: u32,
    },

    #[error("invalid raster: {0}")]
    InvalidRaster(String),

    #[error("empty mask")]
    EmptyMask,

    #[error("point ({x}, {y}) is outside the {width}x{height} raster")]
    OutOfBounds { x: i64, y: i64, width: u32, height: u32 },

    #[error("invalid superpixel id {id} (map has {count})")]
    InvalidSuperpixel { id: u32, count: u32 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate box: {0}")]
    DegenerateBox(String),

    #[error("click constraint violated: {message}")]
    ConstraintViolation { message: String, allowed_region: String },

    #[error("interaction protocol: {0}")]
    Protocol(String),

    #[error("simulation failed: {0}")]
    Simulation(String),

    #[error("segmentation failed: {0}")]
    Segmentation(String),

    #[error("unknown backend `{name}` (available: {available})")]
    UnknownBackend { name: String, available: String },

    #[error("unknown session `{0}`")]
    UnknownSession(String),

    #[error("unknown guidance kind `{0}`")]
    UnknownGuidanceKind(String),

    #[error("manifest {path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("image decode: {0}")]
    Decode(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
