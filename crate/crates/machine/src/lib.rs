//! Abstract GPU-like machine: schedules for the four verification computing
//! patterns, host executors that emulate block, shared-memory and register
//! staging while counting events, and a linear cost formula over the counts.

mod cost;
mod elementwise;
mod error;
mod gemm;
mod meta;
pub mod pipeline;
mod reduction;
mod scalar_vector;
mod schedule;

pub use cost::{operand, stream_kernel, CostReport};
pub use elementwise::{elementwise_cost, naive_elementwise_cost, run_elementwise, run_elementwise_naive};
pub use error::{Error, Result};
pub use gemm::{
    gemm_cost, gemm_kernel_cost, gemm_workload, naive_gemm_cost, run_gemm, run_gemm_naive, GemmKernel, FUSED,
    NEG_HALF, POS_HALF,
};
pub use meta::{CostWeights, HardwareMeta};
pub use pipeline::{pipeline_cost, NodeCost, PipelineCost, Plan};
pub use reduction::{
    naive_chunked_iterations, naive_reduction_cost, reduction_cost, reduction_iterations, run_reduction,
    run_reduction_naive, run_reduction_with, Combine,
};
pub use scalar_vector::{naive_scalar_vector_cost, run_scalar_vector, run_scalar_vector_naive, scalar_vector_cost};
pub use schedule::{
    estimate_resources, GemmSchedule, Pattern, ReductionMode, Resources, Schedule, Workload, BASE_REGISTERS,
    REDUCTION_BLOCK_THREADS,
};

/// Counters of running `sched` on `workload`, identical to what the
/// matching executor reports. Fails on hard-rule or applicability errors.
pub fn modeled_cost(sched: &Schedule, workload: &Workload, meta: &HardwareMeta, elem_bytes: u64) -> Result<CostReport> {
    sched.check(workload, meta, elem_bytes)?;
    Ok(match (*sched, *workload) {
        (Schedule::Gemm(g), w) => gemm_cost(&g, &w, meta, elem_bytes)?,
        (Schedule::VectorReduction { mode }, Workload::VectorReduction { rows, n }) => {
            reduction_cost(mode, rows, n, meta, elem_bytes)?
        }
        (Schedule::ElementwiseMul { group_size }, Workload::ElementwiseMul { neurons, dim }) => {
            elementwise_cost(group_size, neurons, dim, meta, elem_bytes)
        }
        (Schedule::ScalarVector { warps_per_vector }, Workload::ScalarVector { m, n }) => {
            scalar_vector_cost(warps_per_vector, m, n, meta, elem_bytes)
        }
        _ => unreachable!("check rejects pattern mismatches"),
    })
}

/// Counters of the unfused baseline executor of `workload`; GEMM tiles come
/// from the default schedule.
pub fn naive_cost(workload: &Workload, meta: &HardwareMeta, elem_bytes: u64) -> Result<CostReport> {
    Ok(match *workload {
        w @ Workload::Gemm { .. } => naive_gemm_cost(&GemmSchedule::default(), &w, meta, elem_bytes)?,
        Workload::VectorReduction { rows, n } => naive_reduction_cost(rows, n, meta),
        Workload::ElementwiseMul { neurons, dim } => naive_elementwise_cost(neurons, dim, meta),
        Workload::ScalarVector { m, n } => naive_scalar_vector_cost(m, n, meta),
    })
}
