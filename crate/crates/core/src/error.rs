use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: Shape, right: Shape },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("loss must be scalar-shaped 1x1x1x1, got {0}")]
    NonScalarLoss(Shape),

    #[error("backward called on an empty tape")]
    EmptyTape,

    #[error("invalid convolution: {0}")]
    Conv(String),

    #[error("octave convolution: {0}")]
    Octave(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error("numeric failure: non-finite loss at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("truncated payload while reading tensor {0:?}")]
    TruncatedPayload(String),

    #[error("tensor {name:?} has shape {found}, model expects {expected}")]
    ShapeMismatch {
        name: String,
        found: Shape,
        expected: Shape,
    },

    #[error("checkpoint is missing tensor {0:?}")]
    MissingTensor(String),

    #[error("checkpoint holds unexpected tensor {0:?}")]
    UnexpectedTensor(String),

    #[error("checkpoint variant {found:?} does not match requested {expected:?}")]
    VariantMismatch { found: String, expected: String },
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("manifest is empty")]
    EmptyManifest,

    #[error("split fraction {0} outside (0, 1)")]
    InvalidFraction(f64),

    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("cannot decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("replace mode needs {needed} no-fire entries, manifest has {available}")]
    InsufficientNoFire { needed: usize, available: usize },

    #[error("need {needed} {label} entries, manifest has {available}")]
    InsufficientClass {
        label: String,
        needed: usize,
        available: usize,
    },

    #[error("split {0} has no entries")]
    EmptySplit(String),

    #[error("ROC needs both classes present")]
    SingleClass,

    #[error("invalid label {0:?}")]
    InvalidLabel(String),
}
