//! Whole-graph cost accounting: every verification-graph node is mapped to
//! the kernels that execute it, and edges inside a fusion group drop the
//! intermediate round trip through global memory.

use serde::Serialize;
use tverify_core::graph::ValueShape;
use tverify_core::{BoundSide, OpKind, Scalar, VerGraph};

use crate::cost::{operand, stream_kernel, CostReport};
use crate::error::{shape_err, Result};
use crate::gemm::{gemm_kernel_cost, GemmKernel};
use crate::meta::HardwareMeta;
use crate::schedule::{GemmSchedule, Schedule, Workload};
use crate::{modeled_cost, naive_cost};

/// How pattern kernels are executed.
#[derive(Clone, Copy)]
pub enum Plan<'a> {
    /// Baseline executors, no cross-layer fusion.
    Naive,
    /// Scheduled executors with the given schedule per workload, fusion
    /// groups honored.
    Fused(&'a dyn Fn(&Workload) -> Schedule),
}

#[derive(Clone, Debug, Serialize)]
pub struct NodeCost {
    pub node: String,
    pub kind: &'static str,
    pub workloads: Vec<Workload>,
    pub report: CostReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineCost {
    pub nodes: Vec<NodeCost>,
    pub total: CostReport,
}

struct Ctx<'a> {
    meta: &'a HardwareMeta,
    elem: u64,
    plan: Plan<'a>,
    width: u64,
}

impl Ctx<'_> {
    fn pattern(&self, w: Workload, used: &mut Vec<Workload>) -> Result<CostReport> {
        used.push(w);
        match self.plan {
            Plan::Naive => naive_cost(&w, self.meta, self.elem),
            Plan::Fused(choose) => modeled_cost(&choose(&w), &w, self.meta, self.elem),
        }
    }

    fn gemm_schedule(&self, w: &Workload) -> GemmSchedule {
        match self.plan {
            Plan::Fused(choose) => match choose(w) {
                Schedule::Gemm(g) => g,
                _ => GemmSchedule::default(),
            },
            Plan::Naive => GemmSchedule::default(),
        }
    }

    /// A graph-level GEMM variant that has no dedicated executor.
    fn gemm_variant(&self, (m, n, k): (u64, u64, u64), kernel: GemmKernel<'_>, used: &mut Vec<Workload>) -> CostReport {
        let w = Workload::Gemm { m, n, k, bias: false };
        used.push(w);
        gemm_kernel_cost(&self.gemm_schedule(&w), (m, n, k), kernel, self.meta, self.elem)
    }

    fn elementwise(&self, neurons: u64, dim: u64, used: &mut Vec<Workload>) -> Result<CostReport> {
        self.pattern(Workload::ElementwiseMul { neurons, dim }, used)
    }
}

fn count(dims: &[usize]) -> u64 {
    dims.iter().product::<usize>() as u64
}

/// Elements of one value in global memory.
fn value_elems(s: &ValueShape, width: u64) -> u64 {
    match s {
        ValueShape::Weight(d) => count(d),
        ValueShape::Form(d) => count(d) * width,
        ValueShape::Bounds(d) => 2 * count(d) * width,
    }
}

fn side_key(side: BoundSide) -> &'static str {
    match side {
        BoundSide::Lower => operand::X_LOWER,
        BoundSide::Upper => operand::X_UPPER,
    }
}

fn half_key<S>(kind: &OpKind<S>) -> &'static str {
    match kind {
        OpKind::SplitPos => operand::W_POS,
        OpKind::SplitNeg => operand::W_NEG,
        _ => operand::W,
    }
}

/// `(m, n, k)` of a weight `[m, k]` applied to a value over `[.., k]`.
fn gemm_dims(w: &[usize], x: &[usize], width: u64) -> (u64, u64, u64) {
    let k = w[1] as u64;
    (w[0] as u64, count(x) / k * width, k)
}

/// Kernel cost of every node under `plan`, with `dim` perturbation entries
/// per bound row. Sign halves of constant weights are folded at load time.
pub fn pipeline_cost<S: Scalar>(
    g: &VerGraph<S>,
    dim: usize,
    meta: &HardwareMeta,
    elem_bytes: u64,
    plan: Plan<'_>,
) -> Result<PipelineCost> {
    let shapes = g.shapes()?;
    let ctx = Ctx {
        meta,
        elem: elem_bytes,
        plan,
        width: dim as u64 + 1,
    };
    let width = ctx.width;
    let d = dim as u64;
    let nodes = g.nodes();
    let mut out = Vec::with_capacity(nodes.len());
    // global loads of each input value by each node, for fusion adjustment
    let mut input_loads: Vec<Vec<u64>> = Vec::with_capacity(nodes.len());
    for (id, node) in nodes.iter().enumerate() {
        let dims = |i: usize| shapes[node.inputs[i]].dims();
        let own = value_elems(&shapes[id], width);
        let neurons = count(shapes[id].dims());
        let mut used = Vec::new();
        let mut loads = vec![0; node.inputs.len()];
        let stream = |inputs: &[u64], stores: u64| {
            let l: Vec<(&str, u64)> = inputs.iter().map(|&c| (operand::INTERMEDIATE, c)).collect();
            stream_kernel(&l, stores, meta)
        };
        let report = match &node.kind {
            OpKind::Input { .. } | OpKind::Weight { .. } | OpKind::SplitPos | OpKind::SplitNeg => CostReport::default(),
            OpKind::MatMulHalf { side } => {
                let (m, n, k) = gemm_dims(dims(0), dims(1), width);
                let half = half_key(&nodes[node.inputs[0]].kind);
                let kernel = GemmKernel {
                    weights: &[half],
                    bounds: &[side_key(*side)],
                    outputs: 1,
                };
                ctx.gemm_variant((m, n, k), kernel, &mut used)
            }
            OpKind::SideGemm { .. } => {
                let kernel = GemmKernel {
                    weights: &[operand::W],
                    bounds: &[operand::X_LOWER, operand::X_UPPER],
                    outputs: 1,
                };
                ctx.gemm_variant(gemm_dims(dims(0), dims(1), width), kernel, &mut used)
            }
            OpKind::SplitAffine => {
                let kernel = GemmKernel {
                    weights: &[operand::W_POS, operand::W_NEG],
                    bounds: &[operand::X_LOWER, operand::X_UPPER],
                    outputs: 2,
                };
                let (m, n, k) = gemm_dims(dims(0), dims(2), width);
                let mut r = ctx.gemm_variant((m, n, k), kernel, &mut used);
                if node.inputs.len() == 4 {
                    r.load(operand::BIAS, m);
                }
                r.finish(meta)
            }
            OpKind::Affine => {
                let (m, n, k) = gemm_dims(dims(0), dims(1), width);
                let w = Workload::Gemm {
                    m,
                    n,
                    k,
                    bias: node.inputs.len() == 3,
                };
                ctx.pattern(w, &mut used)?
            }
            OpKind::FormAdd => {
                loads = vec![own, own];
                stream(&loads, own)
            }
            OpKind::Pack => {
                if node.inputs.len() == 3 {
                    // bias columns only: one per row and side
                    let rows = neurons;
                    loads = vec![rows, rows, 0];
                    let mut r = stream(&loads[..2], 2 * rows);
                    r.load(operand::BIAS, dims(2)[0] as u64);
                    r.finish(meta)
                } else {
                    CostReport::default()
                }
            }
            OpKind::Relu | OpKind::Tanh | OpKind::Silu | OpKind::Exp | OpKind::Recip => {
                ctx.elementwise(neurons, d, &mut used)?
            }
            OpKind::Add => {
                loads = vec![own, own];
                stream(&loads, own)
            }
            OpKind::Scale { .. } | OpKind::SplitHeads { .. } | OpKind::MergeHeads => {
                loads = vec![own];
                stream(&loads, own)
            }
            OpKind::Mul => bilinear_elementwise(&ctx, neurons, d, &mut used)?,
            OpKind::MatMulBilinear { transpose_b } => {
                let (a, b) = (dims(0), dims(1));
                let inner = a[a.len() - 1] as u64;
                let cols = if *transpose_b { b[b.len() - 2] } else { b[b.len() - 1] } as u64;
                let outputs = count(&a[..a.len() - 1]) * cols;
                let operands = count(a) + count(b);
                let mut r = ctx.pattern(Workload::VectorReduction { rows: 2 * operands, n: d }, &mut used)?;
                let planes = ctx.pattern(
                    Workload::ScalarVector {
                        m: 4 * outputs * inner,
                        n: width,
                    },
                    &mut used,
                )?;
                r.absorb(&planes);
                r.finish(meta)
            }
            OpKind::Softmax => {
                let x = shapes[node.inputs[0]].dims();
                let len = x[x.len() - 1] as u64;
                let rows = neurons / len;
                let mut r = ctx.elementwise(neurons, d, &mut used)?;
                let sum = ctx.pattern(Workload::VectorReduction { rows: 2 * rows * width, n: len }, &mut used)?;
                let recip = ctx.elementwise(rows, d, &mut used)?;
                let mul = bilinear_elementwise(&ctx, neurons, d, &mut used)?;
                for k in [&sum, &recip, &mul] {
                    r.absorb(k);
                }
                r.finish(meta)
            }
            OpKind::MeanPool => {
                let x = shapes[node.inputs[0]].dims();
                let len = x[x.len() - 2] as u64;
                ctx.pattern(Workload::VectorReduction { rows: 2 * neurons * width, n: len }, &mut used)?
            }
        };
        input_loads.push(loads);
        out.push(NodeCost {
            node: node.name.clone(),
            kind: node.kind.name(),
            workloads: used,
            report,
        });
    }
    if matches!(plan, Plan::Fused(_)) {
        let group = g.group_of();
        let consumers = g.consumer_counts();
        for (id, node) in nodes.iter().enumerate() {
            for (i, &p) in node.inputs.iter().enumerate() {
                if group[p] != group[id] || nodes[p].kind.is_source() || consumers[p] != 1 {
                    continue;
                }
                if input_loads[id][i] == 0 {
                    return Err(shape_err(format!(
                        "fused edge {} -> {} into a non-strict consumer",
                        nodes[p].name, node.name
                    )));
                }
                out[id].report.unload(operand::INTERMEDIATE, input_loads[id][i]);
                let stored = value_elems(&shapes[p], width);
                let r = &mut out[p].report;
                r.global_stores = r.global_stores.saturating_sub(stored);
            }
        }
        for n in &mut out {
            n.report = std::mem::take(&mut n.report).finish(meta);
        }
    }
    let total = CostReport::sum(out.iter().map(|n| &n.report), meta);
    Ok(PipelineCost { nodes: out, total })
}

/// Elementwise bilinear product: each operand is staged, concretized and
/// scaled by its McCormick plane coefficients, then the two terms are added.
fn bilinear_elementwise(ctx: &Ctx<'_>, neurons: u64, d: u64, used: &mut Vec<Workload>) -> Result<CostReport> {
    let mut r = ctx.elementwise(neurons, d, used)?;
    r.absorb(&ctx.elementwise(neurons, d, used)?);
    let own = 2 * neurons * ctx.width;
    r.absorb(&stream_kernel(&[(operand::INTERMEDIATE, 2 * own)], own, ctx.meta));
    Ok(r.finish(ctx.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tverify_core::graph::{fuse_double_bound, fuse_weight_pairing};
    use tverify_core::{fuse_all, Tensor};

    fn projection(rows: usize, k: usize, m: usize) -> VerGraph<f64> {
        let mut g = VerGraph::new();
        let x = g.input("x", vec![rows, k]).unwrap();
        let w = Tensor::from_fn(vec![m, k], |i| i as f64 * 0.1 - 1.0);
        let b = Tensor::from_fn(vec![m], |i| i as f64);
        let y = g.projection("p", x, w, Some(b)).unwrap();
        g.set_outputs(vec![y]).unwrap();
        g
    }

    #[test]
    fn fusion_passes_halve_weight_and_bound_traffic() {
        let meta = HardwareMeta::a100_like();
        let (rows, k, m, dim) = (4, 12, 10, 48);
        let n = (rows * (dim + 1)) as u64;
        let (mu, ku) = (m as u64, k as u64);
        let cost = |g: &VerGraph<f64>| pipeline_cost(g, dim, &meta, 8, Plan::Naive).unwrap().total;
        let base = cost(&projection(rows, k, m));
        assert_eq!(base.weight_loads(), 4 * mu * ku);
        assert_eq!(base.bound_loads(), 4 * ku * n);
        let paired = cost(&fuse_weight_pairing(&projection(rows, k, m)));
        assert_eq!(2 * paired.weight_loads(), base.weight_loads());
        assert_eq!(paired.bound_loads(), base.bound_loads());
        let double = cost(&fuse_double_bound(&projection(rows, k, m)));
        assert_eq!(2 * double.bound_loads(), base.bound_loads());
        let choose = |w: &Workload| Schedule::default_for(w);
        let both = pipeline_cost(&fuse_all(&projection(rows, k, m)), dim, &meta, 8, Plan::Fused(&choose))
            .unwrap()
            .total;
        assert_eq!(both.weight_loads(), mu * ku);
        assert_eq!(both.bound_loads(), 2 * ku * n);
    }

    #[test]
    fn cross_layer_fusion_drops_intermediate_round_trip() {
        let meta = HardwareMeta::a100_like();
        let mut g = VerGraph::<f64>::new();
        let x = g.input("x", vec![2, 4]).unwrap();
        let w = Tensor::from_fn(vec![4, 4], |i| i as f64 * 0.1 - 0.7);
        let y = g.projection("p", x, w, None).unwrap();
        let s = g.add("s", OpKind::Scale { factor: 0.5 }, vec![y]).unwrap();
        let r = g.add("r", OpKind::Relu, vec![s]).unwrap();
        g.set_outputs(vec![r]).unwrap();
        let fused = fuse_all(&g);
        let choose = |w: &Workload| Schedule::default_for(w);
        let singles = {
            let mut f = fused.clone();
            let groups = (0..f.len()).map(|i| vec![i]).collect();
            f.set_fusion_groups(groups).unwrap();
            pipeline_cost(&f, 8, &meta, 8, Plan::Fused(&choose)).unwrap().total
        };
        let grouped = pipeline_cost(&fused, 8, &meta, 8, Plan::Fused(&choose)).unwrap().total;
        let y_elems = 2 * 2 * 4 * 9;
        assert_eq!(singles.global_loads - grouped.global_loads, y_elems);
        assert_eq!(singles.global_stores - grouped.global_stores, y_elems);
    }
}
