use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("grid position ({col}, {row}) outside {cols}x{rows} grid")]
    PositionOutOfBounds { col: usize, row: usize, cols: usize, rows: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("signal too short: {0}")]
    TooShort(String),

    #[error("missing grid cell ({col}, {row})")]
    MissingCell { col: usize, row: usize },

    #[error("inconsistent metadata: {0}")]
    InconsistentMetadata(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { loss: f64, epoch: usize, batch: usize },

    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: PathBuf, expected: String },

    #[error("format version mismatch: file has version {found}, this build reads version {expected}")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("checkpoint layer `{layer}` mismatch: file has {found} parameters, model expects {expected}")]
    LayerMismatch { layer: String, found: usize, expected: usize },

    #[error("corrupt container header: {0}")]
    Header(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { field, reason: reason.into() }
    }
}
