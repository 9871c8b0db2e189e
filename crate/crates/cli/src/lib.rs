//! Command-line and HTTP front ends for the `nanoct` alignment and
//! reconstruction library.

pub mod parse;
pub mod pipeline;
pub mod render;
pub mod server;

pub use pipeline::{dry_run, run_pipeline, PipelineConfig, PipelineReport, Stage, StageError};
