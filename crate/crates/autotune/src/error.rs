use std::path::PathBuf;

use crate::tune::TraceRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("no feasible schedule: all {candidates} {pattern} candidates exceed the hardware caps of {meta}")]
    NoFeasibleSchedule {
        pattern: &'static str,
        meta: String,
        candidates: usize,
    },
    #[error("candidate space is empty")]
    EmptySpace,
    #[error("candidate {schedule} is not valid for the space: {source}")]
    InvalidCandidate {
        schedule: String,
        source: tverify_machine::Error,
    },
    /// The trace holds every candidate profiled before the failure.
    #[error("profiling {schedule} failed after {} profiled candidates: {message}", trace.len())]
    Profiler {
        schedule: String,
        message: String,
        trace: Vec<TraceRecord>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("serializing {context}: {source}")]
    Json {
        context: &'static str,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Machine(#[from] tverify_machine::Error),
}
