//! Cost sources used as training labels.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tverify_core::relax::relu_lines;
use tverify_core::{LinearBounds, Norm, PerturbationSpec, Tensor};
use tverify_machine::{
    modeled_cost, run_elementwise, run_elementwise_naive, run_gemm, run_gemm_naive, run_reduction,
    run_reduction_naive, run_scalar_vector, run_scalar_vector_naive, Combine, GemmSchedule, HardwareMeta, Schedule,
    Workload,
};

pub type ProfileError = Box<dyn std::error::Error + Send + Sync>;

/// Cost of one schedule on one workload. Calls may run concurrently.
pub trait Profiler: Sync {
    fn name(&self) -> &'static str;
    fn profile(
        &self,
        sched: &Schedule,
        workload: &Workload,
        meta: &HardwareMeta,
        elem_bytes: u64,
    ) -> Result<f64, ProfileError>;
}

/// The linear cost formula over executor counters. Deterministic.
#[derive(Clone, Copy, Debug, Default)]
pub struct ModeledCostProfiler;

impl Profiler for ModeledCostProfiler {
    fn name(&self) -> &'static str {
        "modeled"
    }

    fn profile(
        &self,
        sched: &Schedule,
        workload: &Workload,
        meta: &HardwareMeta,
        elem_bytes: u64,
    ) -> Result<f64, ProfileError> {
        Ok(modeled_cost(sched, workload, meta, elem_bytes)?.modeled_cost)
    }
}

/// Host wall-clock seconds of the scheduled executor on seeded random
/// operands, minimum over `repeats` runs.
#[derive(Clone, Copy, Debug)]
pub struct WallClockProfiler {
    pub repeats: usize,
    pub seed: u64,
}

impl Default for WallClockProfiler {
    fn default() -> Self {
        Self { repeats: 3, seed: 0 }
    }
}

fn random(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn random_bounds(rng: &mut ChaCha8Rng, neurons: usize, dim: usize) -> Result<LinearBounds<f64>, ProfileError> {
    let lw = random(rng, vec![neurons, dim]);
    let lb = random(rng, vec![neurons]);
    let uw = random(rng, vec![neurons, dim]);
    let ub = lb.map(|v| v + 1.0);
    Ok(LinearBounds::new(lw, lb, uw, ub)?)
}

/// Host seconds of one executor run on operands drawn from `seed`: the
/// scheduled executor for `Some(sched)`, the baseline executor for `None`.
/// GEMM operands use one bound row of `n - 1` perturbation entries.
pub fn time_executor(
    sched: Option<&Schedule>,
    workload: &Workload,
    meta: &HardwareMeta,
    seed: u64,
) -> Result<f64, ProfileError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = |v: u64| v as usize;
    if let Some(s) = sched {
        if s.pattern() != workload.pattern() {
            return Err(format!("schedule {s} does not match workload {workload:?}").into());
        }
    }
    let start;
    match *workload {
        Workload::Gemm { m, n, k, bias } => {
            if n < 2 {
                return Err(format!("GEMM width {n} leaves no perturbation entries").into());
            }
            let x = random_bounds(&mut rng, u(k), u(n) - 1)?;
            let w = random(&mut rng, vec![u(m), u(k)]);
            let b = bias.then(|| random(&mut rng, vec![u(m)]));
            start = Instant::now();
            match sched {
                Some(Schedule::Gemm(g)) => run_gemm(g, meta, &w, b.as_ref(), &x)?,
                _ => run_gemm_naive(&GemmSchedule::default(), meta, &w, b.as_ref(), &x)?,
            };
        }
        Workload::VectorReduction { rows, n } => {
            let x = random(&mut rng, vec![u(rows), u(n)]);
            start = Instant::now();
            match sched {
                Some(&Schedule::VectorReduction { mode }) => run_reduction(mode, meta, &x, |v| v)?,
                _ => run_reduction_naive(meta, &x, |v| v, Combine::Sum)?,
            };
        }
        Workload::ElementwiseMul { neurons, dim } => {
            let x = random_bounds(&mut rng, u(neurons), u(dim))?;
            let spec = PerturbationSpec::new(Norm::Linf, 0.1, u(dim))?;
            start = Instant::now();
            match sched {
                Some(&Schedule::ElementwiseMul { group_size }) => {
                    run_elementwise(group_size, meta, &x, &spec, relu_lines)?
                }
                _ => run_elementwise_naive(meta, &x, &spec, relu_lines)?,
            };
        }
        Workload::ScalarVector { m, n } => {
            let s = random(&mut rng, vec![u(m)]);
            let x = random(&mut rng, vec![u(m), u(n)]);
            start = Instant::now();
            match sched {
                Some(&Schedule::ScalarVector { warps_per_vector }) => {
                    run_scalar_vector(warps_per_vector, meta, &s, &x, |v| v)?
                }
                _ => run_scalar_vector_naive(meta, &s, &x, |v| v)?,
            };
        }
    }
    Ok(start.elapsed().as_secs_f64())
}

impl Profiler for WallClockProfiler {
    fn name(&self) -> &'static str {
        "wall-clock"
    }

    fn profile(
        &self,
        sched: &Schedule,
        workload: &Workload,
        meta: &HardwareMeta,
        elem_bytes: u64,
    ) -> Result<f64, ProfileError> {
        sched.check(workload, meta, elem_bytes)?;
        let mut best = f64::INFINITY;
        for _ in 0..self.repeats.max(1) {
            best = best.min(time_executor(Some(sched), workload, meta, self.seed)?);
        }
        Ok(best)
    }
}
