//! Schedules for the four computing patterns, the workloads they run, and
//! the closed-form resource estimates behind the hard rules.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meta::HardwareMeta;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Pattern {
    Gemm,
    VectorReduction,
    ElementwiseMul,
    ScalarVector,
}

impl Pattern {
    pub const ALL: [Pattern; 4] = [
        Pattern::Gemm,
        Pattern::VectorReduction,
        Pattern::ElementwiseMul,
        Pattern::ScalarVector,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pattern::Gemm => "GEMM",
            Pattern::VectorReduction => "VECTOR_REDUCTION",
            Pattern::ElementwiseMul => "ELEMENTWISE_MUL",
            Pattern::ScalarVector => "SCALAR_VECTOR",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "gemm" => Some(Pattern::Gemm),
            "vector_reduction" | "reduction" => Some(Pattern::VectorReduction),
            "elementwise_mul" | "elementwise" => Some(Pattern::ElementwiseMul),
            "scalar_vector" => Some(Pattern::ScalarVector),
            _ => None,
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReductionMode {
    /// One thread walks the whole vector.
    Sequential,
    /// One warp loads 32 elements and combines them in a 5-round shuffle tree.
    Parallel32,
    /// Per-lane accumulation over 32-element chunks, then one shuffle tree.
    Hybrid,
}

impl ReductionMode {
    pub const ALL: [ReductionMode; 3] = [ReductionMode::Sequential, ReductionMode::Parallel32, ReductionMode::Hybrid];
}

/// Tiled GEMM: a block computes a `tile_m x tile_n` output tile stepping
/// through the reduction axis `tile_k` at a time; each thread owns a
/// `reg_tile_m x reg_tile_n` register micro-tile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GemmSchedule {
    pub tile_m: u64,
    pub tile_n: u64,
    pub tile_k: u64,
    pub threads_per_block: u64,
    pub reg_tile_m: u64,
    pub reg_tile_n: u64,
}

impl GemmSchedule {
    /// Schedule with the thread count implied by the tiles.
    pub fn new(tile_m: u64, tile_n: u64, tile_k: u64, reg_tile_m: u64, reg_tile_n: u64) -> Self {
        let threads_per_block = if reg_tile_m == 0 || reg_tile_n == 0 {
            0
        } else {
            (tile_m / reg_tile_m) * (tile_n / reg_tile_n)
        };
        Self {
            tile_m,
            tile_n,
            tile_k,
            threads_per_block,
            reg_tile_m,
            reg_tile_n,
        }
    }
}

impl Default for GemmSchedule {
    fn default() -> Self {
        Self::new(16, 16, 16, 1, 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum Schedule {
    Gemm(GemmSchedule),
    VectorReduction { mode: ReductionMode },
    /// `group_size` threads per block, one warp per neuron.
    ElementwiseMul { group_size: u64 },
    /// `warps_per_vector` warps share each broadcast scalar.
    ScalarVector { warps_per_vector: u64 },
}

impl Schedule {
    pub fn pattern(&self) -> Pattern {
        match self {
            Schedule::Gemm(_) => Pattern::Gemm,
            Schedule::VectorReduction { .. } => Pattern::VectorReduction,
            Schedule::ElementwiseMul { .. } => Pattern::ElementwiseMul,
            Schedule::ScalarVector { .. } => Pattern::ScalarVector,
        }
    }

    pub fn threads_per_block(&self) -> u64 {
        match *self {
            Schedule::Gemm(g) => g.threads_per_block,
            Schedule::VectorReduction { .. } => REDUCTION_BLOCK_THREADS,
            Schedule::ElementwiseMul { group_size } => group_size,
            Schedule::ScalarVector { warps_per_vector } => 32 * warps_per_vector,
        }
    }

    /// Heuristic starting point: 16^3 GEMM tiles, T = 32, t = 1, and a
    /// shuffle-tree reduction.
    pub fn default_for(workload: &Workload) -> Self {
        match *workload {
            Workload::Gemm { .. } => Schedule::Gemm(GemmSchedule::default()),
            Workload::VectorReduction { n, .. } => Schedule::VectorReduction {
                mode: if n == 32 {
                    ReductionMode::Parallel32
                } else {
                    ReductionMode::Hybrid
                },
            },
            Workload::ElementwiseMul { .. } => Schedule::ElementwiseMul { group_size: 32 },
            Workload::ScalarVector { .. } => Schedule::ScalarVector { warps_per_vector: 1 },
        }
    }

    /// Type invariants, independent of any workload.
    pub fn validate(&self, meta: &HardwareMeta) -> Result<()> {
        let fail = |msg: String| Err(Error::Schedule(msg));
        match *self {
            Schedule::Gemm(g) => {
                let dims = [g.tile_m, g.tile_n, g.tile_k, g.reg_tile_m, g.reg_tile_n];
                if dims.contains(&0) {
                    return fail(format!("zero-size tile in {g:?}"));
                }
                if g.tile_m % g.reg_tile_m != 0 || g.tile_n % g.reg_tile_n != 0 {
                    return fail(format!("register tile does not divide block tile in {g:?}"));
                }
                let implied = (g.tile_m / g.reg_tile_m) * (g.tile_n / g.reg_tile_n);
                if g.threads_per_block != implied {
                    return fail(format!(
                        "threads_per_block {} != {implied} micro-tiles per block",
                        g.threads_per_block
                    ));
                }
            }
            Schedule::VectorReduction { .. } => {}
            Schedule::ElementwiseMul { group_size } => {
                if group_size == 0 || group_size % meta.warp_size != 0 {
                    return fail(format!("group size {group_size} is not a positive multiple of the warp size"));
                }
            }
            Schedule::ScalarVector { warps_per_vector } => {
                if warps_per_vector == 0 {
                    return fail("warps_per_vector must be at least 1".into());
                }
            }
        }
        let threads = self.threads_per_block();
        if threads > meta.max_threads_per_block {
            return fail(format!(
                "{threads} threads per block exceeds the cap of {}",
                meta.max_threads_per_block
            ));
        }
        Ok(())
    }

    /// Type invariants, pattern match, workload applicability and hard rules.
    pub fn check(&self, workload: &Workload, meta: &HardwareMeta, elem_bytes: u64) -> Result<Resources> {
        self.validate(meta)?;
        if self.pattern() != workload.pattern() {
            return Err(Error::PatternMismatch {
                schedule: self.pattern().name(),
                workload: workload.pattern().name(),
            });
        }
        if let (Schedule::VectorReduction { mode: ReductionMode::Parallel32 }, Workload::VectorReduction { n, .. }) =
            (self, workload)
        {
            if *n != 32 {
                return Err(Error::Parallel32Length(*n));
            }
        }
        let r = estimate_resources(self, workload, elem_bytes);
        r.check(meta)?;
        Ok(r)
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Gemm(g) => write!(
                f,
                "GEMM tile={}x{}x{} reg={}x{} threads={}",
                g.tile_m, g.tile_n, g.tile_k, g.reg_tile_m, g.reg_tile_n, g.threads_per_block
            ),
            Schedule::VectorReduction { mode } => write!(f, "VECTOR_REDUCTION mode={mode:?}"),
            Schedule::ElementwiseMul { group_size } => write!(f, "ELEMENTWISE_MUL T={group_size}"),
            Schedule::ScalarVector { warps_per_vector } => write!(f, "SCALAR_VECTOR t={warps_per_vector}"),
        }
    }
}

/// Problem sizes of one pattern instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum Workload {
    /// Weight `[m, k]` times both input bounds `[k, n]`; `n` counts every
    /// bias and perturbation column of every row.
    Gemm {
        m: u64,
        n: u64,
        k: u64,
        #[serde(default)]
        bias: bool,
    },
    /// `rows` independent reductions of `n` elements each.
    VectorReduction { rows: u64, n: u64 },
    /// Relaxing `neurons` neurons whose bounds have `dim` perturbation weights.
    ElementwiseMul { neurons: u64, dim: u64 },
    /// `m` vectors of length `n`, each scaled by its own scalar.
    ScalarVector { m: u64, n: u64 },
}

impl Workload {
    pub fn pattern(&self) -> Pattern {
        match self {
            Workload::Gemm { .. } => Pattern::Gemm,
            Workload::VectorReduction { .. } => Pattern::VectorReduction,
            Workload::ElementwiseMul { .. } => Pattern::ElementwiseMul,
            Workload::ScalarVector { .. } => Pattern::ScalarVector,
        }
    }

    /// Parses `pattern` plus a comma or `x` separated size list:
    /// GEMM `m,n,k`, reduction `rows,n`, elementwise `neurons,dim`,
    /// scalar-vector `m,n`.
    pub fn parse(pattern: Pattern, shape: &str) -> Result<Self> {
        let dims: Vec<u64> = shape
            .split([',', 'x'])
            .map(|s| s.trim().parse::<u64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Shape(format!("{shape:?}: {e}")))?;
        let want = if pattern == Pattern::Gemm { 3 } else { 2 };
        if dims.len() != want || dims.contains(&0) {
            return Err(Error::Shape(format!(
                "{pattern} expects {want} positive sizes, got {shape:?}"
            )));
        }
        Ok(match pattern {
            Pattern::Gemm => Workload::Gemm {
                m: dims[0],
                n: dims[1],
                k: dims[2],
                bias: false,
            },
            Pattern::VectorReduction => Workload::VectorReduction { rows: dims[0], n: dims[1] },
            Pattern::ElementwiseMul => Workload::ElementwiseMul {
                neurons: dims[0],
                dim: dims[1],
            },
            Pattern::ScalarVector => Workload::ScalarVector { m: dims[0], n: dims[1] },
        })
    }
}

/// Estimated per-block shared memory and per-thread registers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resources {
    pub shared_bytes: u64,
    pub registers_per_thread: u64,
}

impl Resources {
    pub fn check(&self, meta: &HardwareMeta) -> Result<()> {
        if self.shared_bytes > meta.shared_mem_per_block {
            return Err(Error::HardRule {
                resource: "shared memory bytes",
                need: self.shared_bytes,
                cap: meta.shared_mem_per_block,
            });
        }
        if self.registers_per_thread > meta.registers_per_thread {
            return Err(Error::HardRule {
                resource: "registers per thread",
                need: self.registers_per_thread,
                cap: meta.registers_per_thread,
            });
        }
        Ok(())
    }

    pub fn fits(&self, meta: &HardwareMeta) -> bool {
        self.check(meta).is_ok()
    }
}

/// Registers every thread spends on indices and addresses.
pub const BASE_REGISTERS: u64 = 16;

pub(crate) fn words(elem_bytes: u64) -> u64 {
    elem_bytes.div_ceil(4).max(1)
}

/// Block size of reduction and streaming kernels.
pub const REDUCTION_BLOCK_THREADS: u64 = 256;

/// Closed-form estimates:
/// - GEMM shared = `(tile_m*tile_k + 2*tile_k*tile_n) * elem` (weight tile
///   plus both bound tiles); registers = `16 + 4*words*reg_m*reg_n` (four
///   accumulators per output: sign half by bound side).
/// - Reduction: no shared memory; one accumulator (sequential) or an
///   accumulator plus a shuffle operand.
/// - Elementwise: per warp-neuron, both weight rows, both biases and the
///   concretized pair: `(T/32) * (2*dim + 4) * elem`.
/// - Scalar-vector: one shared slot for the cross-warp broadcast when t > 1.
pub fn estimate_resources(sched: &Schedule, workload: &Workload, elem_bytes: u64) -> Resources {
    let w = words(elem_bytes);
    match *sched {
        Schedule::Gemm(g) => Resources {
            shared_bytes: (g.tile_m * g.tile_k + 2 * g.tile_k * g.tile_n) * elem_bytes,
            registers_per_thread: BASE_REGISTERS + 4 * w * g.reg_tile_m * g.reg_tile_n,
        },
        Schedule::VectorReduction { mode } => Resources {
            shared_bytes: 0,
            registers_per_thread: BASE_REGISTERS
                + w * match mode {
                    ReductionMode::Sequential => 1,
                    _ => 2,
                },
        },
        Schedule::ElementwiseMul { group_size } => {
            let dim = match *workload {
                Workload::ElementwiseMul { dim, .. } => dim,
                _ => 0,
            };
            Resources {
                shared_bytes: (group_size / 32) * (2 * dim + 4) * elem_bytes,
                registers_per_thread: BASE_REGISTERS + 4 * w,
            }
        }
        Schedule::ScalarVector { warps_per_vector } => Resources {
            shared_bytes: if warps_per_vector > 1 { elem_bytes } else { 0 },
            registers_per_thread: BASE_REGISTERS + 2 * w,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gemm() -> Workload {
        Workload::Gemm {
            m: 64,
            n: 64,
            k: 64,
            bias: false,
        }
    }

    #[test]
    fn gemm_16_cubed_f32_shared_bytes() {
        let r = estimate_resources(&Schedule::Gemm(GemmSchedule::default()), &gemm(), 4);
        assert_eq!(r.shared_bytes, 3072);
        assert_eq!(r.registers_per_thread, 20);
    }

    #[test]
    fn register_estimate_linear_in_micro_tile() {
        let regs = |rm, rn| {
            estimate_resources(&Schedule::Gemm(GemmSchedule::new(32, 32, 8, rm, rn)), &gemm(), 4).registers_per_thread
        };
        for (rm, rn) in [(1, 2), (2, 2), (4, 2), (4, 4), (8, 4)] {
            assert_eq!(regs(rm, rn) - BASE_REGISTERS, rm * rn * (regs(1, 1) - BASE_REGISTERS));
        }
    }

    #[test]
    fn type_invariants() {
        let meta = HardwareMeta::a100_like();
        let mut g = GemmSchedule::default();
        assert!(Schedule::Gemm(g).validate(&meta).is_ok());
        g.threads_per_block = 128;
        assert!(Schedule::Gemm(g).validate(&meta).is_err());
        assert!(Schedule::Gemm(GemmSchedule::new(16, 0, 16, 1, 1)).validate(&meta).is_err());
        assert!(Schedule::Gemm(GemmSchedule::new(64, 64, 8, 1, 1)).validate(&meta).is_err());
        assert!(Schedule::ElementwiseMul { group_size: 48 }.validate(&meta).is_err());
        assert!(Schedule::ElementwiseMul { group_size: 64 }.validate(&meta).is_ok());
        assert!(Schedule::ScalarVector { warps_per_vector: 0 }.validate(&meta).is_err());
        assert!(Schedule::ScalarVector { warps_per_vector: 64 }.validate(&meta).is_err());
    }

    #[test]
    fn check_applies_pattern_length_and_caps() {
        let meta = HardwareMeta::a100_like();
        let red = Workload::VectorReduction { rows: 4, n: 33 };
        let p32 = Schedule::VectorReduction {
            mode: ReductionMode::Parallel32,
        };
        assert!(matches!(p32.check(&red, &meta, 4), Err(Error::Parallel32Length(33))));
        assert!(p32.check(&gemm(), &meta, 4).is_err());
        // 200 KB of staging against the 164 KB cap
        let big = Schedule::Gemm(GemmSchedule::new(256, 128, 128, 8, 4));
        assert!(matches!(big.check(&gemm(), &meta, 4), Err(Error::HardRule { .. })));
        let elem = Workload::ElementwiseMul { neurons: 8, dim: 8192 };
        assert!(Schedule::ElementwiseMul { group_size: 256 }.check(&elem, &meta, 8).is_err());
        assert!(Schedule::ElementwiseMul { group_size: 32 }.check(&elem, &meta, 8).is_ok());
    }

    #[test]
    fn schedule_json_round_trip() {
        for s in [
            Schedule::Gemm(GemmSchedule::default()),
            Schedule::VectorReduction {
                mode: ReductionMode::Hybrid,
            },
            Schedule::ElementwiseMul { group_size: 64 },
            Schedule::ScalarVector { warps_per_vector: 2 },
        ] {
            let text = serde_json::to_string(&s).unwrap();
            assert_eq!(serde_json::from_str::<Schedule>(&text).unwrap(), s);
        }
        let text = r#"{"pattern":"VECTOR_REDUCTION","mode":"PARALLEL32"}"#;
        assert_eq!(
            serde_json::from_str::<Schedule>(text).unwrap(),
            Schedule::VectorReduction {
                mode: ReductionMode::Parallel32
            }
        );
    }

    #[test]
    fn workload_parse() {
        assert_eq!(
            Workload::parse(Pattern::Gemm, "8x16x32").unwrap(),
            Workload::Gemm {
                m: 8,
                n: 16,
                k: 32,
                bias: false
            }
        );
        assert!(Workload::parse(Pattern::ScalarVector, "8").is_err());
        assert!(Workload::parse(Pattern::VectorReduction, "0,4").is_err());
    }
}
