//! Pipeline driver: one TOML experiment file, staged artifacts in one
//! output directory, a manifest per stage.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod stages;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use pipeline::{run, Outcome, RunOptions, Stage, Target};
