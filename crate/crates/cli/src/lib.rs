//! Pipeline orchestration behind the `controstim` command.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod remote;
pub mod stages;
pub mod tables;

pub use config::PipelineConfig;
pub use error::CliError;
pub use stages::{run_pipeline, RunOptions, Stage, StageOutcome};
