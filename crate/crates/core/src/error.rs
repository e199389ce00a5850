use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("division by exact zero in {0}")]
    DivisionByZero(&'static str),
    #[error("invalid axis {axis} for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("invalid permutation {0:?}")]
    InvalidPermutation(Vec<usize>),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("loss is not connected to any recorded operation that requires a gradient")]
    NoTape,
    #[error("half-instance normalization needs an even channel count, got {0}")]
    OddChannels(usize),
    #[error("non-finite activation produced by {0}")]
    NonFiniteActivation(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },
    #[error("missing gradient for parameter {0}")]
    MissingGrad(String),
    #[error("image too small: {0}")]
    TooSmall(String),
    #[error("crop {crop} larger than image {height}x{width}")]
    CropTooLarge { crop: usize, height: usize, width: usize },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(PathBuf),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short category name printed by the CLI on failure.
    pub fn category(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::DivisionByZero(_) => "DivisionByZero",
            Error::InvalidAxis { .. } => "InvalidAxis",
            Error::InvalidPermutation(_) => "InvalidPermutation",
            Error::NotScalar(_) => "NotScalar",
            Error::NoTape => "NoTape",
            Error::OddChannels(_) => "OddChannels",
            Error::NonFiniteActivation(_) => "NonFiniteActivation",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::MissingGrad(_) => "MissingGrad",
            Error::TooSmall(_) => "TooSmall",
            Error::CropTooLarge { .. } => "CropTooLarge",
            Error::UnsupportedFormat(_) => "UnsupportedFormat",
            Error::Config(_) => "ConfigError",
            Error::Checkpoint(_) => "CheckpointError",
            Error::Io { .. } => "IoError",
        }
    }
}
