//! Command-line surface. Each `cmd_*` is callable without a process.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tverify_autotune::{
    tune, write_schedule_json, write_trace_jsonl, CandidateSpace, Grid, ModeledCostProfiler, Profiler, TuneConfig,
    TuneResult, WallClockProfiler,
};
use tverify_core::model::{save_embedding, save_model, TensorStorage};
use tverify_core::{
    fuse_all, gen_synthetic, load_embedding, load_model, Activation, Embedding, ModelConfig, Norm,
};
use tverify_machine::{HardwareMeta, Pattern, Workload};

use crate::bench::{format_table, run_bench, BenchConfig, BenchRow, DEFAULT_EMBEDS, DEFAULT_LENGTHS};
use crate::verify::{MaxEpsilon, Mode, Verifier, VerifyReport};

/// Exit status of a verification that ran to completion.
pub const EXIT_VERIFIED: u8 = 0;
pub const EXIT_NOT_VERIFIED: u8 = 1;
pub const EXIT_ERROR: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "tverify", version, about = "Linear bound verification of transformer classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check robustness at one radius; exit 0 verified, 1 not verified, 2 error.
    Verify(VerifyArgs),
    /// Largest verified radius by bisection.
    Maxeps(MaxepsArgs),
    /// Search schedules for one pattern workload.
    Tune(TuneArgs),
    /// Naive versus fused-and-tuned cost over length and width sweeps.
    Bench(BenchArgs),
    /// Write a seeded synthetic model and input embedding.
    Gen(GenArgs),
    /// Write the verification graph of a model as JSON.
    ExportGraph(ExportGraphArgs),
}

fn parse_norm(s: &str) -> Result<Norm, String> {
    Norm::parse(s).ok_or_else(|| format!("unknown norm {s:?}, expected l1, l2 or linf"))
}

fn parse_pattern(s: &str) -> Result<Pattern, String> {
    Pattern::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Pattern::ALL.iter().map(|p| p.name()).collect();
        format!("unknown pattern {s:?}, expected one of {}", names.join(", "))
    })
}

fn parse_activation(s: &str) -> Result<Activation, String> {
    Activation::parse(s).ok_or_else(|| format!("unknown activation {s:?}, expected relu, tanh or silu"))
}

#[derive(Debug, Clone, Args)]
pub struct ModelInput {
    /// Model manifest (tverify-model/v1).
    #[arg(long)]
    pub model: PathBuf,
    /// Input embedding (tverify-embedding/v1).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "linf", value_parser = parse_norm)]
    pub norm: Norm,
    /// Required gap between the true logit and every other logit.
    #[arg(long, default_value_t = 0.0)]
    pub margin: f64,
    /// Evaluate the graph as built instead of the fused graph.
    #[arg(long, conflicts_with = "fused")]
    pub naive: bool,
    /// Evaluate the fused graph (the default).
    #[arg(long)]
    pub fused: bool,
    /// Metafile name (a100-like, v100-like) or path.
    #[arg(long, default_value = "a100-like")]
    pub meta: String,
}

impl ModelInput {
    fn mode(&self) -> Mode {
        if self.naive {
            Mode::Naive
        } else {
            Mode::Fused
        }
    }

    fn verifier(&self) -> Result<Verifier> {
        let spec = load_model::<f64>(&self.model).with_context(|| format!("loading {}", self.model.display()))?;
        let input: Embedding<f64> =
            load_embedding(&self.input).with_context(|| format!("loading {}", self.input.display()))?;
        Verifier::new(spec, input)
    }
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: ModelInput,
    /// Perturbation radius.
    #[arg(long)]
    pub eps: f64,
    /// Report path (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct MaxepsArgs {
    #[command(flatten)]
    pub common: ModelInput,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    /// Upper end of the search interval.
    #[arg(long, default_value_t = 1.0)]
    pub eps_max: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfilerKind {
    Modeled,
    WallClock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridKind {
    Full,
    Small,
}

#[derive(Debug, Clone, Args)]
pub struct TuneArgs {
    #[arg(long, default_value = "a100-like")]
    pub meta: String,
    /// GEMM, VECTOR_REDUCTION, ELEMENTWISE_MUL or SCALAR_VECTOR.
    #[arg(long, value_parser = parse_pattern)]
    pub pattern: Pattern,
    /// `m,n,k` for GEMM; `rows,n`, `neurons,dim` or `m,n` otherwise.
    #[arg(long)]
    pub shape: String,
    /// Add a bias vector to a GEMM workload.
    #[arg(long)]
    pub bias: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ProfilerKind::Modeled)]
    pub profiler: ProfilerKind,
    #[arg(long, value_enum, default_value_t = GridKind::Full)]
    pub grid: GridKind,
    #[arg(long, default_value_t = 4)]
    pub elem_bytes: u64,
    /// Best schedule (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Search trace (JSON lines); defaults to the schedule path with a
    /// `.trace.jsonl` extension.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Model whose layers, heads, activation and classes are kept;
    /// defaults to one layer with four heads.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Run only the length sweep.
    #[arg(long, conflicts_with = "embed_sweep")]
    pub length_sweep: bool,
    /// Run only the width sweep.
    #[arg(long)]
    pub embed_sweep: bool,
    /// Comma-separated sequence lengths.
    #[arg(long, value_delimiter = ',')]
    pub lengths: Option<Vec<usize>>,
    /// Comma-separated embedding widths.
    #[arg(long, value_delimiter = ',')]
    pub embeds: Option<Vec<usize>>,
    #[arg(long, default_value = "a100-like")]
    pub meta: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest representative workload, in multiply-adds, that is timed.
    #[arg(long, default_value_t = 20_000_000)]
    pub wall_budget: u64,
    /// Rows (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 128)]
    pub embed: usize,
    /// FFN width; defaults to the embedding width.
    #[arg(long)]
    pub ffn: Option<usize>,
    #[arg(long, default_value_t = 16)]
    pub length: usize,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long, default_value = "relu", value_parser = parse_activation)]
    pub activation: Activation,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Keep tensors inline in the JSON files instead of f32 blobs.
    #[arg(long, action = ArgAction::SetTrue)]
    pub inline: bool,
    /// Directory receiving model.json and input.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ExportGraphArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Export the graph after all fusion passes.
    #[arg(long)]
    pub fused: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn write_json(value: &impl Serialize, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn meta(name: &str) -> Result<HardwareMeta> {
    HardwareMeta::resolve(name).with_context(|| format!("loading metafile {name}"))
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<VerifyReport> {
    let c = &args.common;
    let v = c.verifier()?;
    let report = v.report(args.eps, c.norm, c.margin, c.mode(), &meta(&c.meta)?)?;
    if let Some(out) = &args.out {
        write_json(&report, out)?;
    }
    Ok(report)
}

pub fn cmd_maxeps(args: &MaxepsArgs) -> Result<MaxEpsilon> {
    let c = &args.common;
    let v = c.verifier()?;
    let r = v.max_epsilon(c.norm, c.margin, args.tol, args.eps_max, c.mode())?;
    if let Some(out) = &args.out {
        write_json(&r, out)?;
    }
    Ok(r)
}

/// Default trace path next to the schedule file.
pub fn trace_path(out: &Path) -> PathBuf {
    out.with_extension("trace.jsonl")
}

pub fn cmd_tune(args: &TuneArgs) -> Result<TuneResult> {
    let meta = meta(&args.meta)?;
    let mut workload = Workload::parse(args.pattern, &args.shape)?;
    if let Workload::Gemm { bias, .. } = &mut workload {
        *bias = args.bias;
    }
    let grid = match args.grid {
        GridKind::Full => Grid::full(),
        GridKind::Small => Grid::small(),
    };
    let space = CandidateSpace::from_grid(workload, args.elem_bytes, &grid, &meta);
    let wall = WallClockProfiler {
        seed: args.seed,
        ..WallClockProfiler::default()
    };
    let profiler: &dyn Profiler = match args.profiler {
        ProfilerKind::Modeled => &ModeledCostProfiler,
        ProfilerKind::WallClock => &wall,
    };
    let result = tune(&space, &meta, profiler, &TuneConfig::with_seed(args.seed))?;
    write_schedule_json(&result.best, &args.out)?;
    write_trace_jsonl(&result.trace, args.trace.clone().unwrap_or_else(|| trace_path(&args.out)))?;
    Ok(result)
}

pub fn cmd_bench(args: &BenchArgs) -> Result<Vec<BenchRow>> {
    let mut cfg = BenchConfig {
        seed: args.seed,
        wall_budget: args.wall_budget,
        ..BenchConfig::default()
    };
    if let Some(path) = &args.model {
        let spec = load_model::<f64>(path).with_context(|| format!("loading {}", path.display()))?;
        cfg.base = ModelConfig {
            length: cfg.base.length,
            embed_dim: cfg.base.embed_dim,
            ffn_dim: cfg.base.ffn_dim,
            batch_size: 1,
            ..spec.config
        };
    }
    cfg.lengths = args.lengths.clone().unwrap_or_else(|| DEFAULT_LENGTHS.to_vec());
    cfg.embeds = args.embeds.clone().unwrap_or_else(|| DEFAULT_EMBEDS.to_vec());
    if args.length_sweep {
        cfg.embeds.clear();
    }
    if args.embed_sweep {
        cfg.lengths.clear();
    }
    let rows = run_bench(&cfg, &meta(&args.meta)?)?;
    if let Some(out) = &args.out {
        write_json(&rows, out)?;
    }
    Ok(rows)
}

/// Writes `model.json` and `input.json`; the input is labeled with the
/// clean prediction when the batch holds one sample.
pub fn cmd_gen(args: &GenArgs) -> Result<(PathBuf, PathBuf)> {
    let config = ModelConfig {
        num_layers: args.layers,
        num_heads: args.heads,
        embed_dim: args.embed,
        ffn_dim: args.ffn.unwrap_or(args.embed),
        length: args.length,
        batch_size: args.batch,
        activation: args.activation,
        num_classes: args.classes,
    };
    let (spec, x) = gen_synthetic(args.seed, &config)?;
    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let storage = |blob: &str| {
        if args.inline {
            TensorStorage::Inline
        } else {
            TensorStorage::Blob(blob.into())
        }
    };
    let model = args.out_dir.join("model.json");
    let input = args.out_dir.join("input.json");
    save_model(&spec, &model, storage("model.bin"))?;
    let label = if args.batch == 1 {
        let logits = spec.forward(&x)?;
        let row = logits.data();
        Some((0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b }))
    } else {
        None
    };
    save_embedding(&Embedding { data: x, label }, &input, storage("input.bin"))?;
    Ok((model, input))
}

pub fn cmd_export_graph(args: &ExportGraphArgs) -> Result<()> {
    let spec = load_model::<f64>(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let mut g = spec.build_graph()?;
    if args.fused {
        g = fuse_all(&g);
    }
    write_json(&g.to_json(), &args.out)
}

/// Runs one command and returns the process exit status.
pub fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Verify(a) => {
            let r = cmd_verify(a)?;
            println!(
                "{} at eps={} ({}, {}): modeled cost fused/naive {:.3}",
                if r.verified { "verified" } else { "not verified" },
                r.epsilon,
                r.norm,
                r.mode,
                r.cost.modeled_cost_ratio
            );
            Ok(if r.verified { EXIT_VERIFIED } else { EXIT_NOT_VERIFIED })
        }
        Command::Maxeps(a) => {
            let r = cmd_maxeps(a)?;
            println!("max eps {} ({} bisection steps)", r.epsilon, r.bisection_calls);
            Ok(0)
        }
        Command::Tune(a) => {
            let r = cmd_tune(a)?;
            println!(
                "best {} cost {} after {} of {} candidates",
                r.best,
                r.best_cost,
                r.trace.len(),
                r.space_size
            );
            Ok(0)
        }
        Command::Bench(a) => {
            let rows = cmd_bench(a)?;
            if rows.is_empty() {
                bail!("empty sweep");
            }
            print!("{}", format_table(&rows));
            Ok(0)
        }
        Command::Gen(a) => {
            let (m, i) = cmd_gen(a)?;
            println!("wrote {} and {}", m.display(), i.display());
            Ok(0)
        }
        Command::ExportGraph(a) => {
            cmd_export_graph(a)?;
            println!("wrote {}", a.out.display());
            Ok(0)
        }
    }
}
