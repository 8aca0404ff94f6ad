use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the explanation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read image {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },

    #[error("image has a zero dimension")]
    ZeroDimension,

    #[error("polygon needs at least 3 distinct vertices, got {0}")]
    DegeneratePolygon(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("predictor unavailable: {0}")]
    PredictorUnavailable(String),

    #[error("predictor protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("weighted normal equations are singular")]
    SingularSystem,

    #[error("image is uniform, threshold undefined")]
    UniformImage,

    #[error("tumor annotation has zero area")]
    EmptyAnnotation,

    #[error("brain mask has zero area")]
    EmptyMask,

    #[error("{0} is undefined (zero denominator)")]
    UndefinedMetric(&'static str),

    #[error("class {class} has {count} members, need at least {k}")]
    InsufficientClassMembers { class: u8, count: usize, k: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed annotation file: {0}")]
    Annotation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
