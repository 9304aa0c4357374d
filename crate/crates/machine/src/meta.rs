//! Device description read from a JSON metafile: capacity caps for the hard
//! rules, occupancy inputs for the soft rules, and cost-formula weights.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const A100_LIKE: &str = include_str!("../metafiles/a100-like.json");
const V100_LIKE: &str = include_str!("../metafiles/v100-like.json");

/// Weights of the linear cost formula, per counted event.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    pub c_global: f64,
    pub c_shared: f64,
    pub c_reg: f64,
    pub c_sync: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareMeta {
    #[serde(default)]
    pub name: String,
    pub warp_size: u64,
    pub max_threads_per_block: u64,
    pub shared_mem_per_block: u64,
    pub registers_per_thread: u64,
    pub num_sms: u64,
    pub max_threads_per_sm: u64,
    pub cost_weights: CostWeights,
}

impl HardwareMeta {
    pub fn validate(&self) -> Result<()> {
        if self.warp_size != 32 {
            return Err(Error::Meta(format!("warp_size must be 32, got {}", self.warp_size)));
        }
        let caps = [
            ("max_threads_per_block", self.max_threads_per_block),
            ("shared_mem_per_block", self.shared_mem_per_block),
            ("registers_per_thread", self.registers_per_thread),
            ("num_sms", self.num_sms),
            ("max_threads_per_sm", self.max_threads_per_sm),
        ];
        if let Some((name, _)) = caps.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Meta(format!("{name} must be positive")));
        }
        if self.max_threads_per_block > self.max_threads_per_sm {
            return Err(Error::Meta("max_threads_per_block exceeds max_threads_per_sm".into()));
        }
        let w = self.cost_weights;
        for (name, v) in [("c_global", w.c_global), ("c_shared", w.c_shared), ("c_reg", w.c_reg), ("c_sync", w.c_sync)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Meta(format!("cost weight {name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let meta: Self = serde_json::from_str(text).map_err(|source| Error::Json {
            context: "hardware metafile".into(),
            source,
        })?;
        meta.validate()?;
        Ok(meta)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| Error::Meta(format!("{}: {e}", path.display())))
    }

    pub fn a100_like() -> Self {
        Self::from_json(A100_LIKE).expect("bundled metafile is valid")
    }

    pub fn v100_like() -> Self {
        Self::from_json(V100_LIKE).expect("bundled metafile is valid")
    }

    /// Bundled metafile by name, or a metafile path.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match name_or_path {
            "a100-like" => Ok(Self::a100_like()),
            "v100-like" => Ok(Self::v100_like()),
            path => Self::load(path),
        }
    }

    /// Resident blocks per SM, limited by threads and by shared memory
    /// (the per-block cap doubles as the per-SM pool).
    pub fn blocks_per_sm(&self, threads_per_block: u64, shared_bytes: u64) -> u64 {
        let by_threads = self.max_threads_per_sm / threads_per_block.max(1);
        let by_shared = if shared_bytes == 0 {
            u64::MAX
        } else {
            self.shared_mem_per_block / shared_bytes
        };
        by_threads.min(by_shared).max(1)
    }

    /// Rounds of resident blocks needed to run `blocks` blocks.
    pub fn waves(&self, blocks: u64, threads_per_block: u64, shared_bytes: u64) -> u64 {
        let resident = self.num_sms * self.blocks_per_sm(threads_per_block, shared_bytes);
        blocks.div_ceil(resident)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_metafiles_parse() {
        let a = HardwareMeta::a100_like();
        assert_eq!(a.name, "a100-like");
        assert_eq!(a.num_sms, 108);
        assert_eq!(HardwareMeta::v100_like().shared_mem_per_block, 96 * 1024);
    }

    #[test]
    fn rejects_bad_warp_and_zero_caps() {
        let mut m = HardwareMeta::a100_like();
        m.warp_size = 64;
        assert!(m.validate().is_err());
        let mut m = HardwareMeta::a100_like();
        m.num_sms = 0;
        assert!(m.validate().is_err());
        let text = A100_LIKE.replace("\"num_sms\": 108,", "");
        assert!(HardwareMeta::from_json(&text).is_err());
    }

    #[test]
    fn occupancy_limits() {
        let m = HardwareMeta::a100_like();
        assert_eq!(m.blocks_per_sm(256, 0), 8);
        assert_eq!(m.blocks_per_sm(256, 100_000), 1);
        assert_eq!(m.waves(108 * 8, 256, 0), 1);
        assert_eq!(m.waves(108 * 8 + 1, 256, 0), 2);
    }
}
