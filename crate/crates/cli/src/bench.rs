//! Naive versus fused-and-tuned pipelines over length and width sweeps.

use std::fmt::Write as _;

use anyhow::Result;
use serde::{Deserialize, Serialize};
use tverify_autotune::{time_executor, TuneConfig};
use tverify_core::{fuse_all, gen_synthetic, ModelConfig};
use tverify_machine::{modeled_cost, naive_cost as baseline_cost, pipeline_cost, HardwareMeta, NodeCost, Plan, Workload};

use crate::plan::TunedPlanner;
use crate::verify::DEVICE_ELEM_BYTES;

pub const DEFAULT_LENGTHS: [usize; 7] = [2, 4, 8, 16, 32, 64, 128];
pub const DEFAULT_EMBEDS: [usize; 10] = [64, 128, 192, 256, 320, 384, 448, 512, 576, 640];

/// Operator classes reported per configuration, plus `total`.
pub const OPERATORS: [&str; 5] = ["linear", "dot_product", "softmax", "activation", "other"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Layers, heads, activation and classes; length and width are swept.
    pub base: ModelConfig,
    /// Length sweep at the base width.
    pub lengths: Vec<usize>,
    /// Width sweep at the base length; the FFN width follows the embedding.
    pub embeds: Vec<usize>,
    pub seed: u64,
    /// Executors are timed only when a representative workload does at most
    /// this many multiply-adds. Timed schedules are tuned for f64 operands.
    pub wall_budget: u64,
    pub tune: TuneConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            base: ModelConfig::default(),
            lengths: DEFAULT_LENGTHS.to_vec(),
            embeds: DEFAULT_EMBEDS.to_vec(),
            seed: 0,
            wall_budget: 20_000_000,
            tune: TuneConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub sweep: String,
    pub length: usize,
    pub embed_dim: usize,
    pub operator: String,
    /// Unfused graph on baseline executors.
    pub naive_cost: f64,
    /// Fused graph on tuned executors.
    pub fused_cost: f64,
    pub cost_ratio: f64,
    /// Fused over baseline kernel weight loads on the representative workload.
    pub weight_load_ratio: Option<f64>,
    /// Fused over baseline kernel bound loads on the representative workload.
    pub bound_load_ratio: Option<f64>,
    pub naive_wall_seconds: Option<f64>,
    pub fused_wall_seconds: Option<f64>,
    pub workload: Option<Workload>,
    pub schedule: Option<String>,
}

/// Class of a graph node by operator name.
pub fn operator_class(kind: &str) -> &'static str {
    match kind {
        "affine" | "matmul_half" | "form_add" | "pack" | "split_pos" | "split_neg" | "weight" => "linear",
        "matmul_bilinear" => "dot_product",
        "softmax" => "softmax",
        "relu" | "tanh" | "silu" => "activation",
        _ => "other",
    }
}

/// Multiply-adds of one executor run.
pub fn workload_work(w: &Workload) -> u64 {
    match *w {
        Workload::Gemm { m, n, k, .. } => m * n * k,
        Workload::VectorReduction { rows, n } => rows * n,
        Workload::ElementwiseMul { neurons, dim } => neurons * dim,
        Workload::ScalarVector { m, n } => m * n,
    }
}

fn ratio(fused: u64, naive: u64) -> Option<f64> {
    (naive > 0).then(|| fused as f64 / naive as f64)
}

fn class_cost<'a>(nodes: &'a [NodeCost], class: &str) -> (f64, Vec<&'a NodeCost>) {
    let picked: Vec<&NodeCost> = nodes.iter().filter(|n| class == "total" || operator_class(n.kind) == class).collect();
    (picked.iter().map(|n| n.report.modeled_cost).sum(), picked)
}

/// Host executors run on f64.
const HOST_ELEM_BYTES: u64 = 8;

struct Planners<'a> {
    device: TunedPlanner<'a>,
    host: TunedPlanner<'a>,
}

fn bench_config(sweep: &str, cfg: ModelConfig, bench: &BenchConfig, meta: &HardwareMeta, p: &Planners<'_>) -> Result<Vec<BenchRow>> {
    let planner = &p.device;
    let (spec, _) = gen_synthetic(bench.seed, &cfg)?;
    let naive_graph = spec.build_graph()?;
    let fused_graph = fuse_all(&naive_graph);
    let dim = cfg.input_len();
    let naive = pipeline_cost(&naive_graph, dim, meta, DEVICE_ELEM_BYTES, Plan::Naive)?;
    let choose = |w: &Workload| planner.schedule(w);
    let fused = pipeline_cost(&fused_graph, dim, meta, DEVICE_ELEM_BYTES, Plan::Fused(&choose))?;
    let mut rows = Vec::new();
    for class in OPERATORS.iter().copied().chain(["total"]) {
        let (naive_cost, _) = class_cost(&naive.nodes, class);
        let (fused_cost, nodes) = class_cost(&fused.nodes, class);
        if naive_cost == 0.0 && fused_cost == 0.0 {
            continue;
        }
        let mut row = BenchRow {
            sweep: sweep.into(),
            length: cfg.length,
            embed_dim: cfg.embed_dim,
            operator: class.into(),
            naive_cost,
            fused_cost,
            cost_ratio: fused_cost / naive_cost,
            weight_load_ratio: None,
            bound_load_ratio: None,
            naive_wall_seconds: None,
            fused_wall_seconds: None,
            workload: None,
            schedule: None,
        };
        let representative = (class != "total")
            .then(|| nodes.iter().flat_map(|n| n.workloads.iter()).next().copied())
            .flatten();
        if let Some(w) = representative {
            let sched = planner.schedule(&w);
            let f = modeled_cost(&sched, &w, meta, DEVICE_ELEM_BYTES)?;
            let b = baseline_cost(&w, meta, DEVICE_ELEM_BYTES)?;
            row.weight_load_ratio = ratio(f.weight_loads(), b.weight_loads());
            row.bound_load_ratio = ratio(f.bound_loads(), b.bound_loads());
            if workload_work(&w) <= bench.wall_budget {
                let host = p.host.schedule(&w);
                row.fused_wall_seconds = Some(time_executor(Some(&host), &w, meta, bench.seed).map_err(anyhow::Error::msg)?);
                row.naive_wall_seconds = Some(time_executor(None, &w, meta, bench.seed).map_err(anyhow::Error::msg)?);
            }
            row.workload = Some(w);
            row.schedule = Some(sched.to_string());
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn run_bench(bench: &BenchConfig, meta: &HardwareMeta) -> Result<Vec<BenchRow>> {
    let planner = Planners {
        device: TunedPlanner::new(meta, DEVICE_ELEM_BYTES, bench.tune),
        host: TunedPlanner::new(meta, HOST_ELEM_BYTES, bench.tune),
    };
    let mut rows = Vec::new();
    for &length in &bench.lengths {
        let cfg = ModelConfig { length, ..bench.base };
        rows.extend(bench_config("length", cfg, bench, meta, &planner)?);
    }
    for &embed_dim in &bench.embeds {
        let cfg = ModelConfig {
            embed_dim,
            ffn_dim: embed_dim,
            ..bench.base
        };
        rows.extend(bench_config("embed", cfg, bench, meta, &planner)?);
    }
    Ok(rows)
}

/// Fixed-width text table of `rows`.
pub fn format_table(rows: &[BenchRow]) -> String {
    let opt = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |v| format!("{v:.prec$}"));
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<7} {:>4} {:>5} {:<12} {:>14} {:>14} {:>7} {:>8} {:>8} {:>11} {:>11}",
        "sweep", "len", "embed", "operator", "naive_cost", "fused_cost", "ratio", "w_loads", "b_loads", "naive_s", "fused_s"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<7} {:>4} {:>5} {:<12} {:>14.4e} {:>14.4e} {:>7.3} {:>8} {:>8} {:>11} {:>11}",
            r.sweep,
            r.length,
            r.embed_dim,
            r.operator,
            r.naive_cost,
            r.fused_cost,
            r.cost_ratio,
            opt(r.weight_load_ratio, 3),
            opt(r.bound_load_ratio, 3),
            opt(r.naive_wall_seconds, 6),
            opt(r.fused_wall_seconds, 6),
        );
    }
    out
}
