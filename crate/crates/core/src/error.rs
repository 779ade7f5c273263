use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid arena: {0}")]
    InvalidArena(String),

    #[error("time step {0} s outside (0, 0.1]")]
    TimeStep(f64),

    #[error("degenerate geometry: {0}")]
    Degenerate(&'static str),

    #[error("speed window too short: need {needed_ms} ms, got {got_ms} ms")]
    InsufficientSamples { needed_ms: f64, got_ms: f64 },

    #[error("IMU sample spacing {0:.4} s is below the 20 Hz minimum cadence")]
    CadenceTooLow(f64),

    #[error("speed estimate is {age_ms} ms old, older than the {limit_ms} ms sampling interval")]
    StaleSpeedEstimate { age_ms: u64, limit_ms: u64 },

    #[error("subject {0} is behind the camera")]
    SubjectBehindCamera(String),

    #[error("empty dataset recipe")]
    EmptyRecipe,

    #[error("unsupported HOG cell size {0} (expected 2, 4 or 8)")]
    UnsupportedCellSize(usize),

    #[error("training set needs both classes")]
    SingleClass,

    #[error("feature length mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("trial did not fail")]
    NotFailed,

    #[error("total power draw must be positive")]
    ZeroPowerDraw,

    #[error("invalid parameter `{key}`: {reason}")]
    InvalidParameter { key: String, reason: String },

    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("nothing to plot")]
    EmptyRecord,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
