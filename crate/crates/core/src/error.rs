use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unreadable source {path}: {reason}")]
    UnreadableSource { path: PathBuf, reason: String },

    #[error("inconsistent frame dimensions: expected {expected:?}, got {got:?} ({path})")]
    InconsistentDimensions {
        path: PathBuf,
        expected: (u32, u32),
        got: (u32, u32),
    },

    #[error("invalid source: {0}")]
    InvalidSource(String),

    #[error("failed to load model: {0}")]
    ModelLoad(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no fixture row for frame {0}")]
    FixtureMissing(usize),

    #[error("mask has no set cells")]
    EmptyMask,

    #[error("vector length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("time-smoothing lambda must lie in [0, 1], got {0}")]
    InvalidLambda(f64),

    #[error("descriptors of mixed kinds cannot share a distance matrix")]
    MixedDescriptorKinds,

    #[error("descriptor kind {kind} is incompatible with metric {metric}")]
    MetricMismatch {
        kind: &'static str,
        metric: &'static str,
    },

    #[error("at least one descriptor is required")]
    NoDescriptors,

    #[error("k = {k} is outside 1..={n}")]
    KTooLarge { k: usize, n: usize },

    #[error("exhaustive search over C({n}, {k}) medoid sets exceeds the limit")]
    InstanceTooLarge { n: usize, k: usize },

    #[error("{n_clusters} clusters requested but only {n_frames} frames available")]
    TooFewFrames { n_frames: usize, n_clusters: usize },

    #[error("method {0} requires a feature backend")]
    MissingBackend(&'static str),

    #[error("at least two samples are needed to fit a Gaussian, got {0}")]
    TooFewSamples(usize),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("storyboard has no key frames")]
    EmptyStoryboard,

    #[error("timeline width {width} px cannot hold {bars} key-frame bars")]
    WidthTooSmall { width: u32, bars: usize },

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("invalid distance matrix file: {0}")]
    InvalidMatrixFile(String),

    #[error("interrupted")]
    Interrupted,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse grouping used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Source,
    Model,
    Other,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::UnreadableSource { .. }
            | Error::InconsistentDimensions { .. }
            | Error::InvalidSource(_) => ErrorClass::Source,
            Error::ModelLoad(_)
            | Error::ShapeMismatch(_)
            | Error::FixtureMissing(_)
            | Error::MissingBackend(_) => ErrorClass::Model,
            Error::InvalidLambda(_)
            | Error::KTooLarge { .. }
            | Error::TooFewFrames { .. }
            | Error::InvalidLayout(_) => ErrorClass::Usage,
            _ => ErrorClass::Other,
        }
    }
}
