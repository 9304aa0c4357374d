//! Generalized scalar-vector multiplication `y_i = f(s_i) * x_i` with
//! broadcast-aware super threading: `t` warps per vector, the first warp
//! reads `s_i` once and shares it through shared memory.

use tverify_core::{Scalar, Tensor};

use crate::cost::{operand, stream_kernel, CostReport};
use crate::error::{shape_err, Result};
use crate::meta::HardwareMeta;
use crate::schedule::{estimate_resources, Schedule, Workload};

fn dims<S: Scalar>(s: &Tensor<S>, x: &Tensor<S>) -> Result<(u64, u64)> {
    let m = s.len();
    if x.rank() == 0 || m == 0 || x.len() % m != 0 || x.shape()[0] != m {
        return Err(shape_err(format!(
            "scalars {:?} against vectors {:?}",
            s.shape(),
            x.shape()
        )));
    }
    Ok((m as u64, (x.len() / m) as u64))
}

/// Closed-form counters of [`run_scalar_vector`].
pub fn scalar_vector_cost(warps_per_vector: u64, m: u64, n: u64, meta: &HardwareMeta, elem_bytes: u64) -> CostReport {
    let t = warps_per_vector;
    let sched = Schedule::ScalarVector { warps_per_vector: t };
    let res = estimate_resources(&sched, &Workload::ScalarVector { m, n }, elem_bytes);
    let mut r = CostReport::default();
    r.load(operand::SCALARS, m);
    r.load(operand::VECTORS, m * n);
    r.store(m * n);
    r.shared_accesses = if t > 1 { m * t } else { 0 };
    r.cross_thread_ops = m * t;
    r.reduction_iterations = meta.waves(m, 32 * t, res.shared_bytes) * n.div_ceil(32 * t);
    r.estimated_shared_bytes = res.shared_bytes;
    r.estimated_registers = res.registers_per_thread;
    r.finish(meta)
}

/// Scales row `i` of `x` by `f(s[i])`.
pub fn run_scalar_vector<S: Scalar>(
    warps_per_vector: u64,
    meta: &HardwareMeta,
    s: &Tensor<S>,
    x: &Tensor<S>,
    f: impl Fn(S) -> S,
) -> Result<(Tensor<S>, CostReport)> {
    let (m, n) = dims(s, x)?;
    let t = warps_per_vector;
    let sched = Schedule::ScalarVector { warps_per_vector: t };
    let res = sched.check(&Workload::ScalarVector { m, n }, meta, S::BYTES as u64)?;
    let threads = (32 * t) as usize;
    let mut r = CostReport::default();
    let mut y = vec![S::zero(); x.len()];
    let mut steps = 0;
    for (i, (row, out)) in x.data().chunks(n as usize).zip(y.chunks_mut(n as usize)).enumerate() {
        // warp 0 reads the scalar; one shared write and one read per extra warp
        r.load(operand::SCALARS, 1);
        if t > 1 {
            r.shared_accesses += t;
        }
        // each warp broadcasts in registers and evaluates f on its copy
        let scale = f(s.data()[i]);
        r.cross_thread_ops += t;
        steps = 0;
        for start in (0..n as usize).step_by(threads) {
            for lane in 0..threads.min(n as usize - start) {
                let j = start + lane;
                out[j] = scale * row[j];
            }
            steps += 1;
        }
        r.load(operand::VECTORS, n);
        r.store(n);
    }
    r.reduction_iterations = meta.waves(m, 32 * t, res.shared_bytes) * steps;
    r.estimated_shared_bytes = res.shared_bytes;
    r.estimated_registers = res.registers_per_thread;
    Ok((Tensor::new(x.shape().to_vec(), y)?, r.finish(meta)))
}

/// Closed-form counters of [`run_scalar_vector_naive`].
pub fn naive_scalar_vector_cost(m: u64, n: u64, meta: &HardwareMeta) -> CostReport {
    stream_kernel(&[(operand::SCALARS, m * n), (operand::VECTORS, m * n)], m * n, meta)
}

/// Baseline: one thread per element, each reading its row's scalar.
pub fn run_scalar_vector_naive<S: Scalar>(
    meta: &HardwareMeta,
    s: &Tensor<S>,
    x: &Tensor<S>,
    f: impl Fn(S) -> S,
) -> Result<(Tensor<S>, CostReport)> {
    let (m, n) = dims(s, x)?;
    let y: Vec<S> = x
        .data()
        .iter()
        .enumerate()
        .map(|(e, &v)| f(s.data()[e / n as usize]) * v)
        .collect();
    Ok((Tensor::new(x.shape().to_vec(), y)?, naive_scalar_vector_cost(m, n, meta)))
}
