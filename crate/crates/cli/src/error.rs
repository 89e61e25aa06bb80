use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("missing artifact {}: run the `{stage}` stage first", path.display())]
    MissingArtifact { stage: &'static str, path: PathBuf },

    #[error("invalid config `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("cannot read config {}: {reason}", path.display())]
    Parse { path: PathBuf, reason: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: &'static str, source: Box<CliError> },

    #[error(transparent)]
    Core(#[from] mcgid::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Config { field: field.into(), reason: reason.into() }
    }
}
