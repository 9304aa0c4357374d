//! Generalized vector reduction `y_i = sum_j f(x_ij)` in the three modes.

use tverify_core::{Scalar, Tensor};

use crate::cost::{operand, CostReport};
use crate::error::{shape_err, Error, Result};
use crate::meta::HardwareMeta;
use crate::schedule::{ReductionMode, BASE_REGISTERS, REDUCTION_BLOCK_THREADS};

pub const WARP: u64 = 32;

/// Shuffle rounds of a 32-lane tree.
pub const TREE_ROUNDS: u64 = 5;

/// Rows handled per block: one per thread when sequential, one per warp
/// otherwise.
fn rows_per_block(mode: ReductionMode) -> u64 {
    match mode {
        ReductionMode::Sequential => REDUCTION_BLOCK_THREADS,
        ReductionMode::Parallel32 | ReductionMode::Hybrid => REDUCTION_BLOCK_THREADS / WARP,
    }
}

/// Serialized steps to reduce `n` elements: SEQUENTIAL `n`, PARALLEL32
/// `5` (only for `n = 32`), HYBRID `k + 5` with `k = ceil(n / 32)`.
pub fn reduction_iterations(mode: ReductionMode, n: u64) -> Result<u64> {
    if n == 0 {
        return Err(shape_err("reduction over zero elements"));
    }
    match mode {
        ReductionMode::Sequential => Ok(n),
        ReductionMode::Parallel32 if n == WARP => Ok(TREE_ROUNDS),
        ReductionMode::Parallel32 => Err(Error::Parallel32Length(n)),
        ReductionMode::Hybrid => Ok(n.div_ceil(WARP) + TREE_ROUNDS),
    }
}

/// Chunked baseline: a 5-round tree per 32-element chunk plus one
/// accumulation of the chunk result, `6k` in total.
pub fn naive_chunked_iterations(n: u64) -> u64 {
    (TREE_ROUNDS + 1) * n.div_ceil(WARP)
}

/// Associative combiner of a reduction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Combine {
    Sum,
    Max,
}

impl Combine {
    pub fn identity<S: Scalar>(self) -> S {
        match self {
            Combine::Sum => S::zero(),
            Combine::Max => S::neg_infinity(),
        }
    }

    pub fn apply<S: Scalar>(self, a: S, b: S) -> S {
        match self {
            Combine::Sum => a + b,
            Combine::Max => a.max(b),
        }
    }
}

/// Step counts of one emulated row reduction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub(crate) struct RowSteps {
    pub iterations: u64,
    pub shuffles: u64,
}

/// Halving shuffle tree over 32 lanes; lane 0 ends with the result.
pub(crate) fn warp_tree<S: Scalar>(lanes: &mut [S; 32], c: Combine, steps: &mut RowSteps) -> S {
    let mut offset = 16;
    while offset > 0 {
        for l in 0..offset {
            lanes[l] = c.apply(lanes[l], lanes[l + offset]);
        }
        steps.iterations += 1;
        steps.shuffles += 1;
        offset /= 2;
    }
    lanes[0]
}

/// Emulates one row under `mode`; padding lanes hold the identity.
pub(crate) fn reduce_row<S: Scalar>(
    mode: ReductionMode,
    row: &[S],
    f: &impl Fn(S) -> S,
    c: Combine,
    steps: &mut RowSteps,
) -> Result<S> {
    let n = row.len() as u64;
    match mode {
        ReductionMode::Sequential => {
            let mut acc = c.identity();
            for &x in row {
                acc = c.apply(acc, f(x));
                steps.iterations += 1;
            }
            Ok(acc)
        }
        ReductionMode::Parallel32 => {
            if n != WARP {
                return Err(Error::Parallel32Length(n));
            }
            let mut lanes = [S::zero(); 32];
            for (l, &x) in lanes.iter_mut().zip(row) {
                *l = f(x);
            }
            Ok(warp_tree(&mut lanes, c, steps))
        }
        ReductionMode::Hybrid => {
            let mut lanes = [c.identity::<S>(); 32];
            for chunk in row.chunks(WARP as usize) {
                for (l, &x) in lanes.iter_mut().zip(chunk) {
                    *l = c.apply(*l, f(x));
                }
                steps.iterations += 1;
            }
            Ok(warp_tree(&mut lanes, c, steps))
        }
    }
}

fn rows_of<S: Scalar>(x: &Tensor<S>) -> Result<(u64, u64)> {
    if x.rank() == 0 || x.is_empty() {
        return Err(shape_err(format!("reduction input of shape {:?}", x.shape())));
    }
    let n = x.last_dim() as u64;
    Ok((x.len() as u64 / n, n))
}

/// Closed-form counters of [`run_reduction`].
pub fn reduction_cost(mode: ReductionMode, rows: u64, n: u64, meta: &HardwareMeta, elem_bytes: u64) -> Result<CostReport> {
    let per_row = reduction_iterations(mode, n)?;
    let mut r = CostReport::default();
    r.load(operand::VECTORS, rows * n);
    r.store(rows);
    let blocks = rows.div_ceil(rows_per_block(mode));
    r.reduction_iterations = meta.waves(blocks, REDUCTION_BLOCK_THREADS, 0) * per_row;
    r.cross_thread_ops = if mode == ReductionMode::Sequential {
        0
    } else {
        rows * TREE_ROUNDS
    };
    r.estimated_registers = BASE_REGISTERS
        + crate::schedule::words(elem_bytes) * if mode == ReductionMode::Sequential { 1 } else { 2 };
    Ok(r.finish(meta))
}

/// Reduces the last axis of `x` with `y_i = sum_j f(x_ij)`.
pub fn run_reduction<S: Scalar>(
    mode: ReductionMode,
    meta: &HardwareMeta,
    x: &Tensor<S>,
    f: impl Fn(S) -> S,
) -> Result<(Tensor<S>, CostReport)> {
    run_reduction_with(mode, meta, x, f, Combine::Sum)
}

pub fn run_reduction_with<S: Scalar>(
    mode: ReductionMode,
    meta: &HardwareMeta,
    x: &Tensor<S>,
    f: impl Fn(S) -> S,
    combine: Combine,
) -> Result<(Tensor<S>, CostReport)> {
    let (rows, n) = rows_of(x)?;
    let mut r = CostReport::default();
    let mut out = Vec::with_capacity(rows as usize);
    let mut steps = RowSteps::default();
    for row in x.data().chunks(n as usize) {
        r.load(operand::VECTORS, n);
        steps = RowSteps::default();
        out.push(reduce_row(mode, row, &f, combine, &mut steps)?);
        r.cross_thread_ops += steps.shuffles;
        r.store(1);
    }
    let blocks = rows.div_ceil(rows_per_block(mode));
    r.reduction_iterations = meta.waves(blocks, REDUCTION_BLOCK_THREADS, 0) * steps.iterations;
    r.estimated_registers = BASE_REGISTERS
        + crate::schedule::words(S::BYTES as u64) * if mode == ReductionMode::Sequential { 1 } else { 2 };
    let shape = x.shape()[..x.rank() - 1].to_vec();
    Ok((Tensor::new(shape, out)?, r.finish(meta)))
}

/// Closed-form counters of [`run_reduction_naive`].
pub fn naive_reduction_cost(rows: u64, n: u64, meta: &HardwareMeta) -> CostReport {
    let k = n.div_ceil(WARP);
    let mut r = CostReport::default();
    r.load(operand::VECTORS, rows * n);
    r.load(operand::PARTIALS, rows * k);
    r.store(rows * k + rows);
    let blocks = rows.div_ceil(rows_per_block(ReductionMode::Hybrid));
    r.reduction_iterations = meta.waves(blocks, REDUCTION_BLOCK_THREADS, 0) * naive_chunked_iterations(n);
    r.cross_thread_ops = rows * k * TREE_ROUNDS;
    r.estimated_registers = BASE_REGISTERS + 2;
    r.finish(meta)
}

/// Chunked baseline order: each 32-element chunk is tree-reduced, then the
/// chunk results are accumulated one by one.
pub(crate) fn naive_row<S: Scalar>(row: &[S], f: &impl Fn(S) -> S, c: Combine, steps: &mut RowSteps) -> S {
    let mut acc = c.identity();
    for chunk in row.chunks(WARP as usize) {
        let mut lanes = [c.identity::<S>(); 32];
        for (l, &v) in lanes.iter_mut().zip(chunk) {
            *l = f(v);
        }
        let partial = warp_tree(&mut lanes, c, steps);
        acc = c.apply(acc, partial);
        steps.iterations += 1;
    }
    acc
}

/// Chunked baseline: every 32-element chunk is tree-reduced and written to
/// global memory, then one thread accumulates the chunk partials.
pub fn run_reduction_naive<S: Scalar>(
    meta: &HardwareMeta,
    x: &Tensor<S>,
    f: impl Fn(S) -> S,
    combine: Combine,
) -> Result<(Tensor<S>, CostReport)> {
    let (rows, n) = rows_of(x)?;
    let mut r = CostReport::default();
    let mut out = Vec::with_capacity(rows as usize);
    let mut per_row = 0;
    for row in x.data().chunks(n as usize) {
        let mut steps = RowSteps::default();
        let acc = naive_row(row, &f, combine, &mut steps);
        let k = row.len().div_ceil(WARP as usize) as u64;
        r.load(operand::VECTORS, n);
        r.load(operand::PARTIALS, k);
        r.store(k);
        r.cross_thread_ops += steps.shuffles;
        r.store(1);
        per_row = steps.iterations;
        out.push(acc);
    }
    let blocks = rows.div_ceil(rows_per_block(ReductionMode::Hybrid));
    r.reduction_iterations = meta.waves(blocks, REDUCTION_BLOCK_THREADS, 0) * per_row;
    r.estimated_registers = BASE_REGISTERS + 2;
    let shape = x.shape()[..x.rank() - 1].to_vec();
    Ok((Tensor::new(shape, out)?, r.finish(meta)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iteration_formulas() {
        assert_eq!(reduction_iterations(ReductionMode::Parallel32, 32).unwrap(), 5);
        assert_eq!(reduction_iterations(ReductionMode::Hybrid, 1024).unwrap(), 37);
        assert_eq!(reduction_iterations(ReductionMode::Sequential, 1).unwrap(), 1);
        assert!(reduction_iterations(ReductionMode::Parallel32, 31).is_err());
        assert!(reduction_iterations(ReductionMode::Sequential, 0).is_err());
        assert_eq!(naive_chunked_iterations(64), 12);
    }

    #[test]
    fn singleton_sequential_is_f_of_x() {
        let meta = HardwareMeta::a100_like();
        let x = Tensor::new(vec![1, 1], vec![-3.0f64]).unwrap();
        let (y, r) = run_reduction(ReductionMode::Sequential, &meta, &x, |v| v * v).unwrap();
        assert_eq!(y.data(), &[9.0]);
        assert_eq!(r.reduction_iterations, 1);
    }

    #[test]
    fn emulated_steps_match_formula() {
        let meta = HardwareMeta::a100_like();
        for (mode, n) in [
            (ReductionMode::Sequential, 45),
            (ReductionMode::Parallel32, 32),
            (ReductionMode::Hybrid, 45),
            (ReductionMode::Hybrid, 1024),
        ] {
            let x = Tensor::from_fn(vec![3, n], |i| (i as f64).sin());
            let (_, r) = run_reduction(mode, &meta, &x, |v: f64| v.abs()).unwrap();
            assert_eq!(r, reduction_cost(mode, 3, n as u64, &meta, 8).unwrap());
            assert_eq!(r.reduction_iterations, reduction_iterations(mode, n as u64).unwrap());
        }
        let x = Tensor::from_fn(vec![5, 70], |i| (i as f64).cos());
        let (_, r) = run_reduction_naive(&meta, &x, |v: f64| v, Combine::Sum).unwrap();
        assert_eq!(r, naive_reduction_cost(5, 70, &meta));
        assert_eq!(r.reduction_iterations, 18);
    }

    #[test]
    fn max_combine_pads_with_negative_infinity() {
        let meta = HardwareMeta::a100_like();
        let x = Tensor::from_fn(vec![1, 40], |i| -(i as f64) - 1.0);
        let (y, _) = run_reduction_with(ReductionMode::Hybrid, &meta, &x, |v| v, Combine::Max).unwrap();
        assert_eq!(y.data(), &[-1.0]);
    }
}
