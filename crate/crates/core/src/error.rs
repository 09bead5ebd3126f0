//! Crate-wide error type.

use thiserror::Error;

/// Anything that can go wrong in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A video file or frame directory could not be decoded.
    #[error("cannot decode {path}: {reason}")]
    Decode { path: String, reason: String },

    /// A video contained no frames.
    #[error("{path}: video has no frames")]
    EmptyVideo { path: String },

    /// A dataset split selected no videos.
    #[error("split {split:?} matches no manifest entries")]
    EmptySplit { split: String },

    /// A split assignment references a file that is not on disk.
    #[error("split entry {path} not found on disk")]
    MissingSplit { path: String },

    /// A configuration value is out of range or inconsistent.
    #[error("config: {0}")]
    Config(String),

    /// Tuple size outside the supported range.
    #[error("tuple size {0} not supported (need 2 ..= 6)")]
    UnsupportedTupleSize(usize),

    /// A playback speed of zero or a clip that cannot be cut at the
    /// requested speed.
    #[error("invalid clip spec: {0}")]
    InvalidClipSpec(String),

    /// A permutation label or permutation vector that does not belong to S_n.
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    /// A class label at or above the number of classes.
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    /// Temporal extent not divisible into groups of the configured size.
    #[error("temporal size {t} not divisible by group element size {g}")]
    Indivisible { t: usize, g: usize },

    /// An input tensor whose shape disagrees with what a layer or model
    /// was built for.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A checkpoint whose architecture or tensor inventory does not match
    /// the model being restored.
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    /// A corrupt or foreign binary file (bad magic, truncated payload).
    #[error("bad file format: {path}: {reason}")]
    BadFormat { path: String, reason: String },

    /// Retrieval gallery with no entries.
    #[error("feature index is empty")]
    EmptyIndex,

    /// A feature vector with zero norm cannot be unit-normalized.
    #[error("zero-norm feature vector (index {0})")]
    ZeroVector(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml: {0}")]
    TomlParse(#[from] toml::de::Error),

    #[error("toml: {0}")]
    TomlEmit(#[from] toml::ser::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
