//! Schedule search over the abstract machine: candidate grids, hard-rule
//! filtering on shared memory and registers, soft rules as model features,
//! and a boosted-tree cost model driving top-k refinement.

mod error;
pub mod features;
mod gbdt;
mod profile;
mod space;
mod tune;

pub use error::{Error, Result};
pub use features::{extract_features, FEATURE_COUNT, FEATURE_NAMES};
pub use gbdt::{CostModel, GbdtParams};
pub use profile::{time_executor, ModeledCostProfiler, ProfileError, Profiler, WallClockProfiler};
pub use space::{filter_hard_rules, CandidateSpace, Grid};
pub use tune::{
    trace_to_jsonl, tune, write_schedule_json, write_trace_jsonl, TraceRecord, TuneConfig, TuneResult,
};
