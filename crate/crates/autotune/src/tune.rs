//! Seeded search: profile the default schedule and a random seed set, then
//! repeatedly fit the cost model and profile its top-k predictions.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tverify_machine::{HardwareMeta, Schedule};

use crate::error::{Error, Result};
use crate::features::extract_features;
use crate::gbdt::{CostModel, GbdtParams};
use crate::profile::Profiler;
use crate::space::{filter_hard_rules, CandidateSpace};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub seed: u64,
    /// Random candidates profiled before the first fit.
    pub initial: usize,
    /// Candidates profiled per refinement iteration.
    pub top_k: usize,
    pub iterations: usize,
    pub gbdt: GbdtParams,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            initial: 32,
            top_k: 10,
            iterations: 5,
            gbdt: GbdtParams::default(),
        }
    }
}

impl TuneConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Profiles spent on a space of `len` candidates.
    pub fn budget(&self, len: usize) -> usize {
        (1 + self.initial + self.iterations * self.top_k).min(len)
    }
}

/// One profiled candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// 0 for the seed set, then the refinement iteration.
    pub iteration: usize,
    /// Index into the hard-rule-filtered space.
    pub candidate: usize,
    pub schedule: Schedule,
    pub features: Vec<f64>,
    /// Model estimate at selection time; absent for the seed set.
    pub predicted: Option<f64>,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: Schedule,
    pub best_cost: f64,
    /// Size of the filtered space that was searched.
    pub space_size: usize,
    pub trace: Vec<TraceRecord>,
}

struct Session<'a> {
    space: &'a CandidateSpace,
    meta: &'a HardwareMeta,
    profiler: &'a dyn Profiler,
    features: Vec<Vec<f64>>,
    profiled: Vec<bool>,
    trace: Vec<TraceRecord>,
}

impl Session<'_> {
    /// Profiles `picks` concurrently and appends them in pick order.
    fn profile(&mut self, picks: &[usize], iteration: usize, predicted: Option<&[f64]>) -> Result<()> {
        let (space, meta, profiler) = (self.space, self.meta, self.profiler);
        let costs: Vec<_> = picks
            .par_iter()
            .map(|&i| profiler.profile(&space.candidates()[i], space.workload(), meta, space.elem_bytes()))
            .collect();
        for (j, (&i, cost)) in picks.iter().zip(costs).enumerate() {
            let schedule = space.candidates()[i];
            let cost = match cost {
                Ok(c) if c.is_finite() && c >= 0.0 => Ok(c),
                Ok(c) => Err(format!("cost {c} is not a finite non-negative number")),
                Err(e) => Err(e.to_string()),
            }
            .map_err(|message| Error::Profiler {
                schedule: schedule.to_string(),
                message,
                trace: self.trace.clone(),
            })?;
            self.profiled[i] = true;
            self.trace.push(TraceRecord {
                iteration,
                candidate: i,
                schedule,
                features: self.features[i].clone(),
                predicted: predicted.map(|p| p[j]),
                cost,
            });
        }
        Ok(())
    }
}

fn label(cost: f64) -> f64 {
    cost.max(f64::MIN_POSITIVE).ln()
}

/// Best profiled schedule of `space` after hard-rule filtering. Ties keep
/// the earliest profiled candidate.
pub fn tune(space: &CandidateSpace, meta: &HardwareMeta, profiler: &dyn Profiler, cfg: &TuneConfig) -> Result<TuneResult> {
    if space.is_empty() {
        return Err(Error::EmptySpace);
    }
    let space = filter_hard_rules(space, meta)?;
    let n = space.len();
    let mut s = Session {
        space: &space,
        meta,
        profiler,
        features: space
            .candidates()
            .iter()
            .map(|c| extract_features(c, space.workload(), meta, space.elem_bytes()))
            .collect(),
        profiled: vec![false; n],
        trace: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let default = space.position(&Schedule::default_for(space.workload()));
    let mut seeds: Vec<usize> = default.into_iter().collect();
    let rest: Vec<usize> = (0..n).filter(|&i| Some(i) != default).collect();
    seeds.extend(sample(&mut rng, rest.len(), cfg.initial.min(rest.len())).into_iter().map(|j| rest[j]));
    s.profile(&seeds, 0, None)?;

    let mut model = CostModel::new(cfg.gbdt);
    for iteration in 1..=cfg.iterations {
        let open: Vec<usize> = (0..n).filter(|&i| !s.profiled[i]).collect();
        if open.is_empty() {
            break;
        }
        let x: Vec<Vec<f64>> = s.trace.iter().map(|r| r.features.clone()).collect();
        let y: Vec<f64> = s.trace.iter().map(|r| label(r.cost)).collect();
        model.fit(&x, &y);
        let mut ranked: Vec<(f64, usize)> = open.iter().map(|&i| (model.predict(&s.features[i]), i)).collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        ranked.truncate(cfg.top_k.max(1));
        let picks: Vec<usize> = ranked.iter().map(|r| r.1).collect();
        let predicted: Vec<f64> = ranked.iter().map(|r| r.0.exp()).collect();
        s.profile(&picks, iteration, Some(&predicted))?;
    }

    let best = s
        .trace
        .iter()
        .fold(None::<&TraceRecord>, |b, r| match b {
            Some(b) if b.cost <= r.cost => Some(b),
            _ => Some(r),
        })
        .expect("the seed set is never empty");
    Ok(TuneResult {
        best: best.schedule,
        best_cost: best.cost,
        space_size: n,
        trace: s.trace.clone(),
    })
}

/// One JSON object per line, in profiling order.
pub fn trace_to_jsonl(trace: &[TraceRecord]) -> Result<String> {
    let mut out = String::new();
    for r in trace {
        let line = serde_json::to_string(r).map_err(|source| Error::Json {
            context: "trace record",
            source,
        })?;
        writeln!(out, "{line}").expect("writing to a String");
    }
    Ok(out)
}

pub fn write_trace_jsonl(trace: &[TraceRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, trace_to_jsonl(trace)?).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn write_schedule_json(sched: &Schedule, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(sched).map_err(|source| Error::Json {
        context: "schedule",
        source,
    })?;
    std::fs::write(path, text + "\n").map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{ModeledCostProfiler, ProfileError};
    use tverify_machine::{GemmSchedule, Workload};

    fn gemm_space() -> (CandidateSpace, HardwareMeta) {
        let meta = HardwareMeta::a100_like();
        let w = Workload::Gemm { m: 64, n: 65, k: 64, bias: true };
        (CandidateSpace::full(w, 4, &meta), meta)
    }

    #[test]
    fn single_candidate_profiled_once() {
        let meta = HardwareMeta::a100_like();
        let w = Workload::ScalarVector { m: 4, n: 64 };
        let only = Schedule::ScalarVector { warps_per_vector: 2 };
        let space = CandidateSpace::new(w, 4, vec![only], &meta).unwrap();
        let r = tune(&space, &meta, &ModeledCostProfiler, &TuneConfig::default()).unwrap();
        assert_eq!(r.best, only);
        assert_eq!(r.trace.len(), 1);
    }

    #[test]
    fn budget_and_iteration_tags() {
        let (space, meta) = gemm_space();
        let cfg = TuneConfig::with_seed(3);
        let r = tune(&space, &meta, &ModeledCostProfiler, &cfg).unwrap();
        assert!(r.space_size > cfg.budget(usize::MAX));
        assert_eq!(r.trace.len(), cfg.budget(r.space_size));
        assert_eq!(r.trace[0].schedule, Schedule::Gemm(GemmSchedule::default()));
        assert_eq!(r.trace.iter().filter(|t| t.iteration == 0).count(), 33);
        for it in 1..=5 {
            assert_eq!(r.trace.iter().filter(|t| t.iteration == it).count(), 10);
        }
        let mut seen: Vec<usize> = r.trace.iter().map(|t| t.candidate).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), r.trace.len());
    }

    #[test]
    fn profiler_failure_keeps_partial_trace() {
        struct FailOnThird;
        impl Profiler for FailOnThird {
            fn name(&self) -> &'static str {
                "fail"
            }
            fn profile(&self, s: &Schedule, w: &Workload, m: &HardwareMeta, e: u64) -> Result<f64, ProfileError> {
                match s {
                    Schedule::ElementwiseMul { group_size: 128 } => Err("device lost".into()),
                    _ => ModeledCostProfiler.profile(s, w, m, e),
                }
            }
        }
        let meta = HardwareMeta::a100_like();
        let w = Workload::ElementwiseMul { neurons: 64, dim: 16 };
        let space = CandidateSpace::full(w, 4, &meta);
        let Err(Error::Profiler { trace, message, .. }) = tune(&space, &meta, &FailOnThird, &TuneConfig::default())
        else {
            panic!("expected a profiler error");
        };
        assert_eq!(message, "device lost");
        assert!(trace.iter().all(|t| t.schedule != Schedule::ElementwiseMul { group_size: 128 }));
        assert!(!trace.is_empty());
    }

    #[test]
    fn trace_round_trips_through_jsonl() {
        let (space, meta) = gemm_space();
        let r = tune(&space, &meta, &ModeledCostProfiler, &TuneConfig::with_seed(1)).unwrap();
        let text = trace_to_jsonl(&r.trace).unwrap();
        let back: Vec<TraceRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(back, r.trace);
    }
}
