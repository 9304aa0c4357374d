use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid hardware metafile: {0}")]
    Meta(String),
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("hard rule violated: {resource} needs {need}, cap is {cap}")]
    HardRule {
        resource: &'static str,
        need: u64,
        cap: u64,
    },
    #[error("schedule pattern {schedule} cannot run workload pattern {workload}")]
    PatternMismatch {
        schedule: &'static str,
        workload: &'static str,
    },
    #[error("PARALLEL32 reduces exactly 32 elements, got {0}")]
    Parallel32Length(u64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Core(#[from] tverify_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
