//! Event counters of one simulated kernel run and the linear cost formula.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::meta::{CostWeights, HardwareMeta};
use crate::schedule::REDUCTION_BLOCK_THREADS;

/// Operand names used in [`CostReport::operand_loads`].
pub mod operand {
    pub const W: &str = "W";
    pub const W_POS: &str = "W_pos";
    pub const W_NEG: &str = "W_neg";
    pub const X_LOWER: &str = "X_lower";
    pub const X_UPPER: &str = "X_upper";
    pub const BIAS: &str = "bias";
    pub const PARTIALS: &str = "partials";
    pub const COEFFS: &str = "coeffs";
    pub const SCALARS: &str = "S";
    pub const VECTORS: &str = "X";
    pub const INTERMEDIATE: &str = "intermediate";
}

/// Counted events. `reduction_iterations` is the serialized step count on
/// the critical path: accumulation steps, shuffle rounds and tile barriers
/// of one block, times the number of block waves.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub global_loads: u64,
    pub global_stores: u64,
    pub shared_accesses: u64,
    pub reduction_iterations: u64,
    pub cross_thread_ops: u64,
    pub estimated_shared_bytes: u64,
    pub estimated_registers: u64,
    pub modeled_cost: f64,
    /// Global loads broken down by operand; sums to `global_loads`.
    pub operand_loads: BTreeMap<String, u64>,
}

impl CostReport {
    pub fn load(&mut self, operand: &str, count: u64) {
        self.global_loads += count;
        *self.operand_loads.entry(operand.to_string()).or_default() += count;
    }

    pub fn store(&mut self, count: u64) {
        self.global_stores += count;
    }

    /// Removes loads that another kernel's fused epilogue makes redundant.
    pub fn unload(&mut self, operand: &str, count: u64) {
        let entry = self.operand_loads.entry(operand.to_string()).or_default();
        assert!(*entry >= count, "unloading {count} {operand} loads, only {entry} counted");
        *entry -= count;
        self.global_loads -= count;
    }

    pub fn operand(&self, name: &str) -> u64 {
        self.operand_loads.get(name).copied().unwrap_or(0)
    }

    /// Loads of the weight matrix or of its sign halves.
    pub fn weight_loads(&self) -> u64 {
        self.operand(operand::W) + self.operand(operand::W_POS) + self.operand(operand::W_NEG)
    }

    /// Loads of the input bound matrices.
    pub fn bound_loads(&self) -> u64 {
        self.operand(operand::X_LOWER) + self.operand(operand::X_UPPER)
    }

    /// `c_global*(loads+stores) + c_shared*shared + c_reg*cross + c_sync*iterations`.
    pub fn formula(&self, w: &CostWeights) -> f64 {
        w.c_global * (self.global_loads + self.global_stores) as f64
            + w.c_shared * self.shared_accesses as f64
            + w.c_reg * self.cross_thread_ops as f64
            + w.c_sync * self.reduction_iterations as f64
    }

    pub fn finish(mut self, meta: &HardwareMeta) -> Self {
        self.modeled_cost = self.formula(&meta.cost_weights);
        self
    }

    /// Accumulates a kernel that runs after this one: counters add, resource
    /// estimates take the maximum.
    pub fn absorb(&mut self, other: &CostReport) {
        self.global_loads += other.global_loads;
        self.global_stores += other.global_stores;
        self.shared_accesses += other.shared_accesses;
        self.reduction_iterations += other.reduction_iterations;
        self.cross_thread_ops += other.cross_thread_ops;
        self.estimated_shared_bytes = self.estimated_shared_bytes.max(other.estimated_shared_bytes);
        self.estimated_registers = self.estimated_registers.max(other.estimated_registers);
        for (k, v) in &other.operand_loads {
            *self.operand_loads.entry(k.clone()).or_default() += v;
        }
    }

    pub fn sum<'a>(reports: impl IntoIterator<Item = &'a CostReport>, meta: &HardwareMeta) -> CostReport {
        let mut total = CostReport::default();
        for r in reports {
            total.absorb(r);
        }
        total.finish(meta)
    }
}

/// One-element-per-thread kernel that reads the given operands and writes
/// `stores` elements.
pub fn stream_kernel(loads: &[(&str, u64)], stores: u64, meta: &HardwareMeta) -> CostReport {
    let mut r = CostReport::default();
    for &(name, count) in loads {
        if count > 0 {
            r.load(name, count);
        }
    }
    r.store(stores);
    let elements = r.global_loads.max(stores);
    let blocks = elements.div_ceil(REDUCTION_BLOCK_THREADS);
    r.reduction_iterations = meta.waves(blocks, REDUCTION_BLOCK_THREADS, 0);
    r.estimated_registers = crate::schedule::BASE_REGISTERS;
    r.finish(meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_is_linear_in_counts() {
        let meta = HardwareMeta::a100_like();
        let w = meta.cost_weights;
        let r = CostReport {
            global_loads: 10,
            global_stores: 5,
            shared_accesses: 100,
            reduction_iterations: 7,
            cross_thread_ops: 20,
            ..Default::default()
        }
        .finish(&meta);
        let want = w.c_global * 15.0 + w.c_shared * 100.0 + w.c_reg * 20.0 + w.c_sync * 7.0;
        assert!((r.modeled_cost - want).abs() < 1e-12);
    }

    #[test]
    fn absorb_sums_counts_and_maxes_estimates() {
        let meta = HardwareMeta::a100_like();
        let mut a = stream_kernel(&[(operand::W, 10)], 10, &meta);
        a.estimated_shared_bytes = 64;
        let mut b = stream_kernel(&[(operand::W, 4), (operand::BIAS, 2)], 3, &meta);
        b.estimated_shared_bytes = 32;
        let s = CostReport::sum([&a, &b], &meta);
        assert_eq!(s.global_loads, 16);
        assert_eq!(s.operand(operand::W), 14);
        assert_eq!(s.global_stores, 13);
        assert_eq!(s.estimated_shared_bytes, 64);
        let mut u = s.clone();
        u.unload(operand::W, 14);
        assert_eq!(u.global_loads, 2);
    }
}
