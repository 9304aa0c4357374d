//! Candidate generation and hard-rule filtering.

use serde::{Deserialize, Serialize};
use tverify_machine::{
    estimate_resources, Error as MachineError, GemmSchedule, HardwareMeta, Pattern, ReductionMode, Schedule,
    Workload,
};

use crate::error::{Error, Result};

/// Parameter grids, one list per schedule parameter.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub tile_m: Vec<u64>,
    pub tile_n: Vec<u64>,
    pub tile_k: Vec<u64>,
    pub reg_tile_m: Vec<u64>,
    pub reg_tile_n: Vec<u64>,
    pub group_sizes: Vec<u64>,
    pub warps_per_vector: Vec<u64>,
    pub reductions: Vec<ReductionMode>,
}

impl Grid {
    pub fn full() -> Self {
        Self {
            tile_m: vec![8, 16, 32, 64, 128],
            tile_n: vec![8, 16, 32, 64, 128],
            tile_k: vec![4, 8, 16, 32, 64],
            reg_tile_m: vec![1, 2, 4, 8],
            reg_tile_n: vec![1, 2, 4, 8],
            group_sizes: vec![32, 64, 128, 256],
            warps_per_vector: vec![1, 2, 4],
            reductions: ReductionMode::ALL.to_vec(),
        }
    }

    /// At most 432 GEMM candidates, small enough to enumerate.
    pub fn small() -> Self {
        Self {
            tile_m: vec![8, 16, 32, 64],
            tile_n: vec![8, 16, 32, 64],
            tile_k: vec![8, 16, 32],
            reg_tile_m: vec![1, 2, 4],
            reg_tile_n: vec![1, 2, 4],
            ..Self::full()
        }
    }
}

impl Default for Grid {
    fn default() -> Self {
        Self::full()
    }
}

/// Schedules of one workload that satisfy the type invariants and are
/// applicable to it. Resource caps are not yet enforced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSpace {
    workload: Workload,
    elem_bytes: u64,
    candidates: Vec<Schedule>,
}

/// Everything `Schedule::check` enforces except the resource caps.
fn applicable(s: &Schedule, workload: &Workload, meta: &HardwareMeta, elem_bytes: u64) -> Result<(), MachineError> {
    match s.check(workload, meta, elem_bytes) {
        Ok(_) | Err(MachineError::HardRule { .. }) => Ok(()),
        Err(e) => Err(e),
    }
}

/// Smallest power of two `>= v`, floored at `lo`, as a tile cap: larger
/// tiles only add idle threads.
fn tile_cap(v: u64, lo: u64) -> u64 {
    v.next_power_of_two().max(lo)
}

impl CandidateSpace {
    /// Explicit candidates; duplicates are dropped, order is kept.
    pub fn new(workload: Workload, elem_bytes: u64, candidates: Vec<Schedule>, meta: &HardwareMeta) -> Result<Self> {
        let mut kept: Vec<Schedule> = Vec::with_capacity(candidates.len());
        for s in candidates {
            applicable(&s, &workload, meta, elem_bytes).map_err(|source| Error::InvalidCandidate {
                schedule: s.to_string(),
                source,
            })?;
            if !kept.contains(&s) {
                kept.push(s);
            }
        }
        Ok(Self {
            workload,
            elem_bytes,
            candidates: kept,
        })
    }

    /// Every grid point valid for `workload`. GEMM tiles are capped at the
    /// next power of two of the matching problem dimension.
    pub fn from_grid(workload: Workload, elem_bytes: u64, grid: &Grid, meta: &HardwareMeta) -> Self {
        let mut out = Vec::new();
        match workload {
            Workload::Gemm { m, n, k, .. } => {
                let lo = |g: &[u64]| g.iter().copied().min().unwrap_or(1);
                let (cm, cn, ck) = (
                    tile_cap(m, lo(&grid.tile_m)),
                    tile_cap(n, lo(&grid.tile_n)),
                    tile_cap(k, lo(&grid.tile_k)),
                );
                for &tm in grid.tile_m.iter().filter(|&&t| t <= cm) {
                    for &tn in grid.tile_n.iter().filter(|&&t| t <= cn) {
                        for &tk in grid.tile_k.iter().filter(|&&t| t <= ck) {
                            for &rm in grid.reg_tile_m.iter().filter(|&&r| r > 0 && tm % r == 0) {
                                for &rn in grid.reg_tile_n.iter().filter(|&&r| r > 0 && tn % r == 0) {
                                    out.push(Schedule::Gemm(GemmSchedule::new(tm, tn, tk, rm, rn)));
                                }
                            }
                        }
                    }
                }
            }
            Workload::VectorReduction { .. } => {
                out.extend(grid.reductions.iter().map(|&mode| Schedule::VectorReduction { mode }))
            }
            Workload::ElementwiseMul { .. } => out.extend(
                grid.group_sizes
                    .iter()
                    .map(|&group_size| Schedule::ElementwiseMul { group_size }),
            ),
            Workload::ScalarVector { .. } => out.extend(
                grid.warps_per_vector
                    .iter()
                    .map(|&warps_per_vector| Schedule::ScalarVector { warps_per_vector }),
            ),
        }
        out.retain(|s| applicable(s, &workload, meta, elem_bytes).is_ok());
        out.dedup();
        Self {
            workload,
            elem_bytes,
            candidates: out,
        }
    }

    pub fn full(workload: Workload, elem_bytes: u64, meta: &HardwareMeta) -> Self {
        Self::from_grid(workload, elem_bytes, &Grid::full(), meta)
    }

    pub fn workload(&self) -> &Workload {
        &self.workload
    }

    pub fn pattern(&self) -> Pattern {
        self.workload.pattern()
    }

    pub fn elem_bytes(&self) -> u64 {
        self.elem_bytes
    }

    pub fn candidates(&self) -> &[Schedule] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn position(&self, s: &Schedule) -> Option<usize> {
        self.candidates.iter().position(|c| c == s)
    }
}

/// Keeps exactly the candidates whose estimated shared memory and registers
/// fit the caps of `meta`.
pub fn filter_hard_rules(space: &CandidateSpace, meta: &HardwareMeta) -> Result<CandidateSpace> {
    let candidates: Vec<Schedule> = space
        .candidates
        .iter()
        .filter(|s| estimate_resources(s, &space.workload, space.elem_bytes).fits(meta))
        .copied()
        .collect();
    if candidates.is_empty() {
        return Err(Error::NoFeasibleSchedule {
            pattern: space.pattern().name(),
            meta: meta.name.clone(),
            candidates: space.len(),
        });
    }
    Ok(CandidateSpace {
        candidates,
        ..space.clone()
    })
}
