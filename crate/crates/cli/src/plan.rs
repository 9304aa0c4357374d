//! Per-workload tuned schedules for whole-pipeline costing.

use std::collections::HashMap;
use std::sync::Mutex;

use tverify_autotune::{tune, CandidateSpace, Grid, ModeledCostProfiler, TuneConfig};
use tverify_machine::{HardwareMeta, Schedule, Workload};

/// Tunes each distinct workload once on the modeled-cost profiler.
/// Workloads without a feasible candidate keep the default schedule.
pub struct TunedPlanner<'a> {
    meta: &'a HardwareMeta,
    elem_bytes: u64,
    grid: Grid,
    config: TuneConfig,
    cache: Mutex<HashMap<Workload, Schedule>>,
}

impl<'a> TunedPlanner<'a> {
    pub fn new(meta: &'a HardwareMeta, elem_bytes: u64, config: TuneConfig) -> Self {
        Self {
            meta,
            elem_bytes,
            grid: Grid::full(),
            config,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn schedule(&self, w: &Workload) -> Schedule {
        if let Some(s) = self.cache.lock().expect("planner cache").get(w) {
            return *s;
        }
        let space = CandidateSpace::from_grid(*w, self.elem_bytes, &self.grid, self.meta);
        let s = tune(&space, self.meta, &ModeledCostProfiler, &self.config)
            .map(|r| r.best)
            .unwrap_or_else(|_| Schedule::default_for(w));
        self.cache.lock().expect("planner cache").insert(*w, s);
        s
    }

    /// Tuned workloads so far.
    pub fn len(&self) -> usize {
        self.cache.lock().expect("planner cache").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
