use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },

    #[error("data length {actual} does not match {expected}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("channel mismatch: filters expect {expected} channels, features have {actual}")]
    ChannelMismatch { expected: usize, actual: usize },

    #[error("class {0} is not covered by the volume")]
    MissingClass(u8),

    #[error("class set mismatch: {0}")]
    ClassSetMismatch(String),

    #[error("duplicate class id {0}")]
    DuplicateClass(u8),

    #[error("label {label} outside label space of size {num_labels}")]
    LabelOutOfRange { label: u8, num_labels: usize },

    #[error("prediction contains the ignore index at pixel {0}")]
    IgnoreInPrediction(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("detector contract violated: {0}")]
    Detector(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Failures decoding the on-disk formats. Each variant has a stable numeric
/// code so scripts can tell them apart.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("file truncated: needed {needed} bytes, found {found}")]
    Truncated { needed: u64, found: u64 },
    #[error("dimension product overflows")]
    DimOverflow,
    #[error("rank {0} not supported (minimum 2)")]
    BadRank(u32),
    #[error("unknown element type code {0}")]
    UnknownElementType(u8),
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(u64),
    #[error("unexpected element type or shape: {0}")]
    UnexpectedShape(String),
    #[error("png: {0}")]
    Png(String),
}

impl FormatError {
    pub fn code(&self) -> u32 {
        match self {
            FormatError::BadMagic(_) => 10,
            FormatError::Truncated { .. } => 11,
            FormatError::DimOverflow => 12,
            FormatError::BadRank(_) => 13,
            FormatError::UnknownElementType(_) => 14,
            FormatError::TrailingBytes(_) => 15,
            FormatError::UnexpectedShape(_) => 16,
            FormatError::Png(_) => 20,
        }
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
