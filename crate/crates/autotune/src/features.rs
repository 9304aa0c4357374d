//! Fixed-layout feature vectors for the cost model.
//!
//! Layout, one slot per name in [`FEATURE_NAMES`]:
//! - slots 0..10: schedule parameters; parameters a pattern lacks are zero,
//!   the reduction mode is one-hot.
//! - slots 10..16: hardware properties of the metafile.
//! - slots 16..21: soft-rule proxies derived from the schedule and
//!   workload: threads per block, estimated shared bytes and registers,
//!   resident blocks per SM (occupancy) and waves over the grid.

use tverify_machine::{estimate_resources, HardwareMeta, ReductionMode, Schedule, Workload};

pub const FEATURE_NAMES: [&str; 21] = [
    "tile_m",
    "tile_n",
    "tile_k",
    "reg_tile_m",
    "reg_tile_n",
    "group_size",
    "warps_per_vector",
    "mode_sequential",
    "mode_parallel32",
    "mode_hybrid",
    "warp_size",
    "max_threads_per_block",
    "shared_mem_per_block",
    "registers_per_thread",
    "num_sms",
    "max_threads_per_sm",
    "threads_per_block",
    "shared_bytes",
    "registers",
    "blocks_per_sm",
    "waves",
];

pub const FEATURE_COUNT: usize = FEATURE_NAMES.len();

/// Slots holding schedule parameters.
pub const PARAMETER_SLOTS: std::ops::Range<usize> = 0..10;
/// Slots holding hardware properties.
pub const HARDWARE_SLOTS: std::ops::Range<usize> = 10..16;
/// Slots derived from parameters, workload and hardware.
pub const DERIVED_SLOTS: std::ops::Range<usize> = 16..21;

/// Thread blocks launched for `sched` on `workload`.
fn grid_blocks(sched: &Schedule, workload: &Workload) -> u64 {
    match (*sched, *workload) {
        (Schedule::Gemm(g), Workload::Gemm { m, n, .. }) => m.div_ceil(g.tile_m) * n.div_ceil(g.tile_n),
        (Schedule::VectorReduction { mode }, Workload::VectorReduction { rows, .. }) => {
            let per_block = match mode {
                ReductionMode::Sequential => sched.threads_per_block(),
                _ => sched.threads_per_block() / 32,
            };
            rows.div_ceil(per_block.max(1))
        }
        (Schedule::ElementwiseMul { group_size }, Workload::ElementwiseMul { neurons, .. }) => {
            neurons.div_ceil((group_size / 32).max(1))
        }
        (Schedule::ScalarVector { .. }, Workload::ScalarVector { m, .. }) => m,
        _ => 0,
    }
}

pub fn extract_features(sched: &Schedule, workload: &Workload, meta: &HardwareMeta, elem_bytes: u64) -> Vec<f64> {
    let mut f = [0u64; FEATURE_COUNT];
    match *sched {
        Schedule::Gemm(g) => f[..5].copy_from_slice(&[g.tile_m, g.tile_n, g.tile_k, g.reg_tile_m, g.reg_tile_n]),
        Schedule::ElementwiseMul { group_size } => f[5] = group_size,
        Schedule::ScalarVector { warps_per_vector } => f[6] = warps_per_vector,
        Schedule::VectorReduction { mode } => {
            f[7 + ReductionMode::ALL.iter().position(|&m| m == mode).unwrap_or(0)] = 1;
        }
    }
    f[HARDWARE_SLOTS].copy_from_slice(&[
        meta.warp_size,
        meta.max_threads_per_block,
        meta.shared_mem_per_block,
        meta.registers_per_thread,
        meta.num_sms,
        meta.max_threads_per_sm,
    ]);
    let threads = sched.threads_per_block();
    let r = estimate_resources(sched, workload, elem_bytes);
    f[DERIVED_SLOTS].copy_from_slice(&[
        threads,
        r.shared_bytes,
        r.registers_per_thread,
        meta.blocks_per_sm(threads, r.shared_bytes),
        meta.waves(grid_blocks(sched, workload), threads, r.shared_bytes),
    ]);
    f.iter().map(|&v| v as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use tverify_machine::GemmSchedule;

    #[test]
    fn hardware_slots_follow_metafile() {
        let w = Workload::ScalarVector { m: 4, n: 64 };
        let s = Schedule::ScalarVector { warps_per_vector: 2 };
        let a = extract_features(&s, &w, &HardwareMeta::a100_like(), 4);
        let v = extract_features(&s, &w, &HardwareMeta::v100_like(), 4);
        assert_eq!(a[PARAMETER_SLOTS], v[PARAMETER_SLOTS]);
        assert_ne!(a[HARDWARE_SLOTS], v[HARDWARE_SLOTS]);
        assert_eq!(a[12], 167_936.0);
    }

    #[test]
    fn one_hot_reduction_mode() {
        let w = Workload::VectorReduction { rows: 8, n: 32 };
        let meta = HardwareMeta::a100_like();
        for (i, &mode) in ReductionMode::ALL.iter().enumerate() {
            let f = extract_features(&Schedule::VectorReduction { mode }, &w, &meta, 4);
            let hot: Vec<usize> = (7..10).filter(|&j| f[j] == 1.0).collect();
            assert_eq!(hot, vec![7 + i]);
        }
    }

    #[test]
    fn gemm_occupancy_proxy() {
        let w = Workload::Gemm { m: 64, n: 64, k: 64, bias: false };
        let meta = HardwareMeta::a100_like();
        let f = extract_features(&Schedule::Gemm(GemmSchedule::default()), &w, &meta, 4);
        // 256 threads, 3072 bytes: the thread cap allows 8 blocks per SM
        assert_eq!(f[16..20], [256.0, 3072.0, 20.0, 8.0]);
        assert_eq!(f[20], 1.0);
    }
}
