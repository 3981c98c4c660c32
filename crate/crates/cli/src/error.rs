use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("stage `{stage}` needs `{missing}` to run first ({detail})")]
    Dependency {
        stage: &'static str,
        missing: &'static str,
        detail: String,
    },
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Other(String),
}

impl PipelineError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        PipelineError::Io(format!("{}: {e}", path.display()))
    }

    /// Process exit code: 2 for validation, 3 for dependency, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 2,
            PipelineError::Dependency { .. } => 3,
            _ => 1,
        }
    }
}

macro_rules! from_validation {
    ($($t:ty),*) => {$(
        impl From<$t> for PipelineError {
            fn from(e: $t) -> Self {
                PipelineError::Validation(e.to_string())
            }
        }
    )*};
}

from_validation!(
    vqa_align::model::ModelError,
    vqa_align::questions::QuestionError
);

macro_rules! from_other {
    ($($t:ty),*) => {$(
        impl From<$t> for PipelineError {
            fn from(e: $t) -> Self {
                PipelineError::Other(e.to_string())
            }
        }
    )*};
}

from_other!(
    vqa_align::embedding::EmbeddingError,
    vqa_align::rsa::RsaError,
    vqa_align::metric::MetricError,
    vqa_align::dimred::PcaError,
    vqa_align_harness::jobs::JobError,
    vqa_align_harness::transport::TransportError,
    vqa_align_harness::capacity::CapacityError,
    serde_json::Error
);
