//! Robustness checks of one model on one input embedding.

use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use tverify_core::{
    check_robust, concretize, evaluate, fuse_all, input_bounds, ConcreteBounds, Embedding, Norm, PerturbationSpec,
    Tensor, TransformerSpec, VerGraph,
};
use tverify_machine::{pipeline_cost, CostReport, HardwareMeta, Plan, Schedule};

/// Element width assumed by the device cost model (f32 operands).
pub const DEVICE_ELEM_BYTES: u64 = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Graph after all fusion passes.
    #[default]
    Fused,
    /// Graph as built, one node per primitive.
    Naive,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Fused => "fused",
            Mode::Naive => "naive",
        })
    }
}

/// Per-class interval and verdict for one batch sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub label: usize,
    pub predicted: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub verified: bool,
}

/// Modeled device traffic of the naive and fused pipelines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub naive: CostTotals,
    pub fused: CostTotals,
    pub modeled_cost_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostTotals {
    pub global_loads: u64,
    pub global_stores: u64,
    pub weight_loads: u64,
    pub bound_loads: u64,
    pub modeled_cost: f64,
}

impl From<&CostReport> for CostTotals {
    fn from(r: &CostReport) -> Self {
        Self {
            global_loads: r.global_loads,
            global_stores: r.global_stores,
            weight_loads: r.weight_loads(),
            bound_loads: r.bound_loads(),
            modeled_cost: r.modeled_cost,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub verified: bool,
    pub epsilon: f64,
    pub norm: String,
    pub margin: f64,
    pub mode: Mode,
    pub samples: Vec<SampleReport>,
    pub wall_seconds: f64,
    pub cost: CostSummary,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxEpsilon {
    /// Largest verified radius found.
    pub epsilon: f64,
    /// Smallest radius known to fail, absent when `eps_max` verified.
    pub failed_at: Option<f64>,
    /// Bisection steps, excluding the two endpoint checks.
    pub bisection_calls: usize,
}

pub fn norm_name(norm: Norm) -> &'static str {
    match norm {
        Norm::L1 => "l1",
        Norm::L2 => "l2",
        Norm::Linf => "linf",
    }
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
}

/// A model with its two graph forms and one input.
pub struct Verifier {
    spec: TransformerSpec<f64>,
    naive: VerGraph<f64>,
    fused: VerGraph<f64>,
    x: Tensor<f64>,
    labels: Vec<usize>,
    predicted: Vec<usize>,
}

impl Verifier {
    /// Labels default to the clean prediction of each sample.
    pub fn new(spec: TransformerSpec<f64>, input: Embedding<f64>) -> Result<Self> {
        spec.validate()?;
        let logits = spec.forward(&input.data)?;
        let classes = spec.config.num_classes;
        let predicted: Vec<usize> = logits.data().chunks(classes).map(argmax).collect();
        let labels = match input.label {
            Some(l) => {
                ensure!(l < classes, "label {l} out of range for {classes} classes");
                vec![l; predicted.len()]
            }
            None => predicted.clone(),
        };
        let naive = spec.build_graph()?;
        let fused = fuse_all(&naive);
        Ok(Self {
            spec,
            naive,
            fused,
            x: input.data,
            labels,
            predicted,
        })
    }

    pub fn spec(&self) -> &TransformerSpec<f64> {
        &self.spec
    }

    pub fn graph(&self, mode: Mode) -> &VerGraph<f64> {
        match mode {
            Mode::Fused => &self.fused,
            Mode::Naive => &self.naive,
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Concretized logit bounds `[batch, classes]` over the joint ball of
    /// radius `epsilon` around the whole input.
    pub fn bounds(&self, epsilon: f64, norm: Norm, mode: Mode) -> Result<ConcreteBounds<f64>> {
        let ball = PerturbationSpec::new(norm, epsilon, self.x.len())?;
        let b = evaluate(self.graph(mode), &[input_bounds(&self.x, &ball)?], &ball)?;
        Ok(concretize(&b, &ball))
    }

    fn samples(&self, c: &ConcreteBounds<f64>, margin: f64) -> Result<Vec<SampleReport>> {
        let classes = self.spec.config.num_classes;
        let mut out = Vec::with_capacity(self.labels.len());
        for (i, (&label, &predicted)) in self.labels.iter().zip(&self.predicted).enumerate() {
            let lo = c.lo.data()[i * classes..(i + 1) * classes].to_vec();
            let hi = c.hi.data()[i * classes..(i + 1) * classes].to_vec();
            let row = ConcreteBounds::new(Tensor::new(vec![classes], lo.clone())?, Tensor::new(vec![classes], hi.clone())?)?;
            out.push(SampleReport {
                label,
                predicted,
                lo,
                hi,
                verified: check_robust(&row, label, margin)?,
            });
        }
        Ok(out)
    }

    /// True when every sample keeps its label with `margin` to spare.
    pub fn check(&self, epsilon: f64, norm: Norm, margin: f64, mode: Mode) -> Result<bool> {
        let c = self.bounds(epsilon, norm, mode)?;
        Ok(self.samples(&c, margin)?.iter().all(|s| s.verified))
    }

    pub fn cost_summary(&self, meta: &HardwareMeta) -> Result<CostSummary> {
        let dim = self.x.len();
        let naive = pipeline_cost(&self.naive, dim, meta, DEVICE_ELEM_BYTES, Plan::Naive)?;
        let default = |w: &tverify_machine::Workload| Schedule::default_for(w);
        let fused = pipeline_cost(&self.fused, dim, meta, DEVICE_ELEM_BYTES, Plan::Fused(&default))?;
        Ok(CostSummary {
            modeled_cost_ratio: fused.total.modeled_cost / naive.total.modeled_cost,
            naive: (&naive.total).into(),
            fused: (&fused.total).into(),
        })
    }

    pub fn report(&self, epsilon: f64, norm: Norm, margin: f64, mode: Mode, meta: &HardwareMeta) -> Result<VerifyReport> {
        let start = Instant::now();
        let c = self.bounds(epsilon, norm, mode)?;
        let samples = self.samples(&c, margin)?;
        let wall_seconds = start.elapsed().as_secs_f64();
        Ok(VerifyReport {
            verified: samples.iter().all(|s| s.verified),
            epsilon,
            norm: norm_name(norm).into(),
            margin,
            mode,
            samples,
            wall_seconds,
            cost: self.cost_summary(meta)?,
        })
    }

    /// Bisection for the largest verified radius in `[0, eps_max]`, to
    /// within `tol`. Verification is monotone in the radius.
    pub fn max_epsilon(&self, norm: Norm, margin: f64, tol: f64, eps_max: f64, mode: Mode) -> Result<MaxEpsilon> {
        ensure!(tol > 0.0 && tol.is_finite(), "tolerance must be positive, got {tol}");
        ensure!(eps_max >= 0.0 && eps_max.is_finite(), "eps_max must be non-negative, got {eps_max}");
        if !self.check(0.0, norm, margin, mode).context("verifying at radius 0")? {
            bail!("misclassified input: not verified at radius 0");
        }
        if self.check(eps_max, norm, margin, mode)? {
            return Ok(MaxEpsilon {
                epsilon: eps_max,
                failed_at: None,
                bisection_calls: 0,
            });
        }
        let (mut lo, mut hi) = (0.0, eps_max);
        let mut calls = 0;
        while hi - lo > tol {
            let mid = lo + (hi - lo) / 2.0;
            calls += 1;
            if self.check(mid, norm, margin, mode)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(MaxEpsilon {
            epsilon: lo,
            failed_at: Some(hi),
            bisection_calls: calls,
        })
    }
}
