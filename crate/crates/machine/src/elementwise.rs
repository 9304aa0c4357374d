//! Elementwise relaxation with sharing-oriented scheduling: one warp per
//! neuron stages both bound-weight rows in shared memory once, concretizes
//! them with a hybrid reduction, then rescales the staged rows in place.

use tverify_core::relax::LinePair;
use tverify_core::{LinearBounds, LinearForm, Norm, PerturbationSpec, Scalar, Tensor};

use crate::cost::{operand, stream_kernel, CostReport};
use crate::error::{shape_err, Result};
use crate::meta::HardwareMeta;
use crate::reduction::{naive_chunked_iterations, naive_row, reduce_row, Combine, RowSteps, TREE_ROUNDS, WARP};
use crate::schedule::{estimate_resources, ReductionMode, Schedule, Workload, REDUCTION_BLOCK_THREADS};

fn check_input<S: Scalar>(x: &LinearBounds<S>, spec: &PerturbationSpec) -> Result<(u64, u64)> {
    if x.dim() != spec.dim {
        return Err(shape_err(format!(
            "bounds over {} perturbation entries, ball has {}",
            x.dim(),
            spec.dim
        )));
    }
    Ok((x.neurons() as u64, x.dim() as u64))
}

/// Per-block serialized steps: two hybrid reductions and the rescale sweep.
fn block_steps(dim: u64) -> u64 {
    2 * (dim.div_ceil(WARP) + TREE_ROUNDS) + dim.div_ceil(WARP)
}

/// Closed-form counters of [`run_elementwise`].
pub fn elementwise_cost(group_size: u64, neurons: u64, dim: u64, meta: &HardwareMeta, elem_bytes: u64) -> CostReport {
    let sched = Schedule::ElementwiseMul { group_size };
    let res = estimate_resources(&sched, &Workload::ElementwiseMul { neurons, dim }, elem_bytes);
    let mut r = CostReport::default();
    r.load(operand::X_LOWER, neurons * (dim + 1));
    r.load(operand::X_UPPER, neurons * (dim + 1));
    r.store(2 * neurons * (dim + 1));
    r.shared_accesses = neurons * (6 * dim + 8);
    r.cross_thread_ops = neurons * 2 * TREE_ROUNDS;
    let blocks = neurons.div_ceil(group_size / WARP);
    r.reduction_iterations = meta.waves(blocks, group_size, res.shared_bytes) * block_steps(dim);
    r.estimated_shared_bytes = res.shared_bytes;
    r.estimated_registers = res.registers_per_thread;
    r.finish(meta)
}

/// `||row||_q` with the reduction order of the given executor.
fn dual_norm<S: Scalar>(q: Norm, row: &[S], naive: bool, steps: &mut RowSteps) -> Result<S> {
    let abs = |v: S| v.abs();
    let sq = |v: S| v * v;
    let run = |f: &dyn Fn(S) -> S, c: Combine, steps: &mut RowSteps| -> Result<S> {
        if naive {
            Ok(naive_row(row, &f, c, steps))
        } else {
            reduce_row(ReductionMode::Hybrid, row, &f, c, steps)
        }
    };
    Ok(match q {
        Norm::L1 => run(&abs, Combine::Sum, steps)?,
        Norm::L2 => run(&sq, Combine::Sum, steps)?.sqrt(),
        Norm::Linf => run(&abs, Combine::Max, steps)?,
    })
}

/// Concretized `(lo, hi)` of one neuron, ordered as `concretize` orders them.
fn concretize_neuron<S: Scalar>(
    lb: S,
    lw: &[S],
    ub: S,
    uw: &[S],
    spec: &PerturbationSpec,
    naive: bool,
    steps: &mut RowSteps,
) -> Result<(S, S)> {
    let q = spec.norm.dual();
    let eps = S::lit(spec.epsilon);
    let l = lb - eps * dual_norm(q, lw, naive, steps)?;
    let h = ub + eps * dual_norm(q, uw, naive, steps)?;
    Ok(if l <= h { (l, h) } else { (h, l) })
}

/// Applies the line pair to the staged rows: each side reads the input side
/// matching the sign of its slope.
#[allow(clippy::too_many_arguments)]
fn rescale<S: Scalar>(
    p: LinePair<S>,
    lb: S,
    lw: &[S],
    ub: S,
    uw: &[S],
    out_lb: &mut Vec<S>,
    out_lw: &mut Vec<S>,
    out_ub: &mut Vec<S>,
    out_uw: &mut Vec<S>,
) {
    let (lo_b, lo_w) = if p.lower.slope >= S::zero() { (lb, lw) } else { (ub, uw) };
    let (up_b, up_w) = if p.upper.slope >= S::zero() { (ub, uw) } else { (lb, lw) };
    out_lb.push(p.lower.slope * lo_b + p.lower.intercept);
    out_ub.push(p.upper.slope * up_b + p.upper.intercept);
    out_lw.extend(lo_w.iter().map(|&v| p.lower.slope * v));
    out_uw.extend(up_w.iter().map(|&v| p.upper.slope * v));
}

fn assemble<S: Scalar>(x: &LinearBounds<S>, lb: Vec<S>, lw: Vec<S>, ub: Vec<S>, uw: Vec<S>) -> Result<LinearBounds<S>> {
    let shape = x.neuron_shape().to_vec();
    let mut wshape = shape.clone();
    wshape.push(x.dim());
    let lower = LinearForm::new(Tensor::new(shape.clone(), lb)?, Tensor::new(wshape.clone(), lw)?)?;
    let upper = LinearForm::new(Tensor::new(shape, ub)?, Tensor::new(wshape, uw)?)?;
    Ok(LinearBounds::from_forms(lower, upper)?)
}

/// Relaxes every neuron of `x` with the lines `producer(lo, hi)` returns
/// for its concretized interval.
pub fn run_elementwise<S: Scalar>(
    group_size: u64,
    meta: &HardwareMeta,
    x: &LinearBounds<S>,
    spec: &PerturbationSpec,
    mut producer: impl FnMut(S, S) -> LinePair<S>,
) -> Result<(LinearBounds<S>, CostReport)> {
    let (neurons, dim) = check_input(x, spec)?;
    let sched = Schedule::ElementwiseMul { group_size };
    let res = sched.check(&Workload::ElementwiseMul { neurons, dim }, meta, S::BYTES as u64)?;
    let d = dim as usize;
    let warps = (group_size / WARP) as usize;
    let mut r = CostReport::default();
    let (mut lb, mut lw, mut ub, mut uw) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    // per-warp shared slots: [lb, ub, lw row, uw row]
    let mut shared: Vec<S> = vec![S::zero(); warps * (2 * d + 2)];
    let mut steps = RowSteps::default();
    for block in (0..neurons as usize).step_by(warps) {
        let members = warps.min(neurons as usize - block);
        for wi in 0..members {
            let i = block + wi;
            // step 1: stage both rows from global, once
            let slot = &mut shared[wi * (2 * d + 2)..(wi + 1) * (2 * d + 2)];
            slot[0] = x.lower.bias.data()[i];
            slot[1] = x.upper.bias.data()[i];
            slot[2..2 + d].copy_from_slice(x.lower.row(i));
            slot[2 + d..].copy_from_slice(x.upper.row(i));
            r.load(operand::X_LOWER, dim + 1);
            r.load(operand::X_UPPER, dim + 1);
            r.shared_accesses += 2 * (dim + 1);
        }
        for wi in 0..members {
            let slot = &shared[wi * (2 * d + 2)..(wi + 1) * (2 * d + 2)];
            let (slb, sub, slw, suw) = (slot[0], slot[1], &slot[2..2 + d], &slot[2 + d..]);
            // step 2: concretize from shared with the warp reduction
            steps = RowSteps::default();
            let (lo, hi) = concretize_neuron(slb, slw, sub, suw, spec, false, &mut steps)?;
            r.shared_accesses += 2 * dim + 2;
            r.cross_thread_ops += steps.shuffles;
            // step 3: every lane reads the same interval, rescales its entries
            let p = producer(lo, hi);
            r.shared_accesses += 2 + 2 * dim + 2;
            rescale(p, slb, slw, sub, suw, &mut lb, &mut lw, &mut ub, &mut uw);
            r.store(2 * (dim + 1));
        }
    }
    let blocks = neurons.div_ceil(warps as u64);
    let per_block = steps.iterations + dim.div_ceil(WARP);
    r.reduction_iterations = meta.waves(blocks, group_size, res.shared_bytes) * per_block;
    r.estimated_shared_bytes = res.shared_bytes;
    r.estimated_registers = res.registers_per_thread;
    Ok((assemble(x, lb, lw, ub, uw)?, r.finish(meta)))
}

/// Closed-form counters of [`run_elementwise_naive`].
pub fn naive_elementwise_cost(neurons: u64, dim: u64, meta: &HardwareMeta) -> CostReport {
    let k = dim.div_ceil(WARP);
    let mut concretize = CostReport::default();
    concretize.load(operand::X_LOWER, neurons * (dim + 1));
    concretize.load(operand::X_UPPER, neurons * (dim + 1));
    concretize.load(operand::PARTIALS, 2 * neurons * k);
    concretize.store(2 * neurons * k + 2 * neurons);
    concretize.cross_thread_ops = 2 * neurons * k * TREE_ROUNDS;
    let blocks = neurons.div_ceil(REDUCTION_BLOCK_THREADS / WARP);
    concretize.reduction_iterations =
        meta.waves(blocks, REDUCTION_BLOCK_THREADS, 0) * 2 * naive_chunked_iterations(dim);
    concretize.estimated_registers = crate::schedule::BASE_REGISTERS + 2;
    let relax = stream_kernel(&[(operand::INTERMEDIATE, 2 * neurons)], 4 * neurons, meta);
    let compose = stream_kernel(
        &[
            (operand::COEFFS, 4 * neurons),
            (operand::X_LOWER, neurons * (dim + 1)),
            (operand::X_UPPER, neurons * (dim + 1)),
        ],
        2 * neurons * (dim + 1),
        meta,
    );
    CostReport::sum([&concretize.finish(meta), &relax, &compose], meta)
}

/// Baseline: a concretize kernel with chunked reductions, a relaxation
/// kernel writing line coefficients, and a compose kernel that reads the
/// bound rows from global memory a second time.
pub fn run_elementwise_naive<S: Scalar>(
    meta: &HardwareMeta,
    x: &LinearBounds<S>,
    spec: &PerturbationSpec,
    mut producer: impl FnMut(S, S) -> LinePair<S>,
) -> Result<(LinearBounds<S>, CostReport)> {
    let (neurons, dim) = check_input(x, spec)?;
    let n = neurons as usize;
    let k = dim.div_ceil(WARP);
    let mut conc = CostReport::default();
    let mut intervals = Vec::with_capacity(n);
    let mut steps = RowSteps::default();
    for i in 0..n {
        steps = RowSteps::default();
        conc.load(operand::X_LOWER, dim + 1);
        conc.load(operand::X_UPPER, dim + 1);
        intervals.push(concretize_neuron(
            x.lower.bias.data()[i],
            x.lower.row(i),
            x.upper.bias.data()[i],
            x.upper.row(i),
            spec,
            true,
            &mut steps,
        )?);
        conc.store(2 * k);
        conc.load(operand::PARTIALS, 2 * k);
        conc.store(2);
        conc.cross_thread_ops += steps.shuffles;
    }
    let blocks = neurons.div_ceil(REDUCTION_BLOCK_THREADS / WARP);
    conc.reduction_iterations = meta.waves(blocks, REDUCTION_BLOCK_THREADS, 0) * steps.iterations;
    conc.estimated_registers = crate::schedule::BASE_REGISTERS + 2;

    let lines: Vec<LinePair<S>> = intervals.iter().map(|&(lo, hi)| producer(lo, hi)).collect();
    let relax = stream_kernel(&[(operand::INTERMEDIATE, 2 * neurons)], 4 * neurons, meta);

    let (mut lb, mut lw, mut ub, mut uw) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, p) in lines.into_iter().enumerate() {
        rescale(
            p,
            x.lower.bias.data()[i],
            x.lower.row(i),
            x.upper.bias.data()[i],
            x.upper.row(i),
            &mut lb,
            &mut lw,
            &mut ub,
            &mut uw,
        );
    }
    let compose = stream_kernel(
        &[
            (operand::COEFFS, 4 * neurons),
            (operand::X_LOWER, neurons * (dim + 1)),
            (operand::X_UPPER, neurons * (dim + 1)),
        ],
        2 * neurons * (dim + 1),
        meta,
    );
    let report = CostReport::sum([&conc.finish(meta), &relax, &compose], meta);
    Ok((assemble(x, lb, lw, ub, uw)?, report))
}
