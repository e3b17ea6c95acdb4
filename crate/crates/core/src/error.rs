use std::io;

use thiserror::Error;

use crate::types::ModelTag;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can surface.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding dimension must be positive")]
    ZeroDimension,
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("embedding contains a non-finite value")]
    NonFinite,
    #[error("embedding is not unit-norm (norm = {norm})")]
    NotUnitNorm { norm: f64 },
    #[error("invalid subject id: {0}")]
    InvalidSubjectId(String),
    #[error("model subset must not be empty")]
    EmptySubset,
    #[error("unknown model tag {0:?}")]
    UnknownTag(String),

    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("PGM error: {0}")]
    Pgm(String),
    #[error("minutia at ({x}, {y}) lies outside the {width}x{height} image")]
    MinutiaOutOfBounds { x: u32, y: u32, width: u32, height: u32 },
    #[error("the minutiae transform requires a minutiae template")]
    MissingMinutiae,

    #[error("minutiae header error: {0}")]
    MinutiaeHeader(String),
    #[error("minutiae syntax error on line {line}: {message}")]
    MinutiaeSyntax { line: usize, message: String },
    #[error("minutiae bounds error on line {line}: {message}")]
    MinutiaeBounds { line: usize, message: String },

    #[error("image {width}x{height} is smaller than the {grid}x{grid} encoder grid")]
    ImageTooSmall { width: u32, height: u32, grid: usize },
    #[error("image has no gradient energy; cannot produce an embedding")]
    DegenerateImage,

    #[error("no fusion weight for model {0}")]
    MissingWeight(ModelTag),
    #[error("invalid fusion weights: {0}")]
    InvalidWeights(String),
    #[error("weighted centroid is degenerate (norm {norm:e})")]
    DegenerateCentroid { norm: f64 },
    #[error("score sequence is empty")]
    EmptyScores,
    #[error("no threshold for model {0}")]
    MissingThreshold(ModelTag),
    #[error("rate must lie in (0, 1], got {0}")]
    InvalidRate(f64),

    #[error("subject {0} is already enrolled")]
    DuplicateId(String),
    #[error("gallery column is empty")]
    EmptyGallery,
    #[error("gallery columns are not aligned: {0}")]
    MisalignedGallery(String),
    #[error("embedding store error: {0}")]
    Store(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("ranking depth {depth} is below the requested rank {max_rank}")]
    RankDepthTooSmall { depth: usize, max_rank: usize },
    #[error("t-test needs at least two samples per group")]
    InsufficientSamples,

    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::ZeroDimension => "ZeroDimension",
            Error::ZeroVector => "ZeroVector",
            Error::NonFinite => "NonFinite",
            Error::NotUnitNorm { .. } => "NotUnitNorm",
            Error::InvalidSubjectId(_) => "InvalidSubjectId",
            Error::EmptySubset => "EmptySubset",
            Error::UnknownTag(_) => "UnknownTag",
            Error::InvalidImage(_) => "InvalidImage",
            Error::InvalidParams(_) => "InvalidParams",
            Error::Pgm(_) => "PgmError",
            Error::MinutiaOutOfBounds { .. } => "MinutiaOutOfBounds",
            Error::MissingMinutiae => "MissingMinutiae",
            Error::MinutiaeHeader(_) => "HeaderError",
            Error::MinutiaeSyntax { .. } => "SyntaxError",
            Error::MinutiaeBounds { .. } => "BoundsError",
            Error::ImageTooSmall { .. } => "ImageTooSmall",
            Error::DegenerateImage => "DegenerateImage",
            Error::MissingWeight(_) => "MissingWeight",
            Error::InvalidWeights(_) => "InvalidWeights",
            Error::DegenerateCentroid { .. } => "DegenerateCentroid",
            Error::EmptyScores => "EmptyScores",
            Error::MissingThreshold(_) => "MissingThreshold",
            Error::InvalidRate(_) => "InvalidRate",
            Error::DuplicateId(_) => "DuplicateId",
            Error::EmptyGallery => "EmptyGallery",
            Error::MisalignedGallery(_) => "MisalignedGallery",
            Error::Store(_) => "StoreError",
            Error::InsufficientData(_) => "InsufficientData",
            Error::RankDepthTooSmall { .. } => "RankDepthTooSmall",
            Error::InsufficientSamples => "InsufficientSamples",
            Error::Config(_) => "ConfigError",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
        }
    }
}
