// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use std::path::PathBuf;

use crate::trace::Functionality;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Inconsistent shapes or invalid model configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A NaN or infinity appeared in a forward pass.
    #[error("non-finite value in layer {layer}: {detail}")]
    Numeric { layer: usize, detail: String },

    /// Caller supplied unusable input (empty response, bad fraction, ...).
    #[error("invalid input: {0}")]
    Input(String),

    #[error("token id {token} at position {position} is out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange {
        token: u32,
        position: usize,
        vocab_size: usize,
    },

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("invalid plant specification: {0}")]
    Plant(String),

    /// Average precision requested for a label list with no positives.
    #[error("average precision is undefined without positive labels")]
    UndefinedAveragePrecision,

    #[error("functionality `{0}` has no instances")]
    MissingFunctionality(Functionality),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("dimension inconsistency: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid labels for instance `{id}`: bits {bits:#09b}")]
    Labels { id: String, bits: u8 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
