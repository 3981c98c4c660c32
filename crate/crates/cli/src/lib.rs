//! Staged analysis pipeline, provider harness commands and the survey
//! server.

pub mod config;
pub mod error;
pub mod metadata;
pub mod ops;
pub mod report;
pub mod serve;
pub mod stages;
pub mod store;

pub use config::RunConfig;
pub use error::PipelineError;
pub use stages::{Pipeline, Stage, StageOutcome};
