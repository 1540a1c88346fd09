use serde::{Deserialize, Serialize};

use crate::model::{kv_heads_per_rank, HardwareSpec, ModelSpec, ParallelismConfig, WorkloadSpec};

use super::phases::{local_batch, post_proj_group, post_proj_params, qkv_params};

/// Resident bytes on the busiest GPU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryFootprint {
    pub weight_bytes: f64,
    pub kv_bytes: f64,
}

impl MemoryFootprint {
    pub fn total(&self) -> f64 {
        self.weight_bytes + self.kv_bytes
    }

    pub fn fits(&self, hw: &HardwareSpec) -> bool {
        self.total() <= hw.dram_capacity
    }
}

/// Weights plus KV shard held by one GPU. The KV shard rounds the sequence
/// up to whole tokens per KVP rank.
pub fn memory_footprint(
    config: &ParallelismConfig,
    model: &ModelSpec,
    work: &WorkloadSpec,
    hw: &HardwareSpec,
) -> MemoryFootprint {
    let layers = f64::from(model.layers.div_ceil(config.pp.max(1)));
    let h = f64::from(model.hidden_dim);
    let gate = f64::from(model.ffn_gate_factor);
    let tpf = f64::from(config.tpf.max(1));

    let attention = qkv_params(model, config.tpa.max(1))
        + post_proj_params(model, post_proj_group(config).max(1));
    let ffn = match &model.moe {
        None => gate * h * f64::from(model.ffn_dim) / tpf,
        Some(moe) => {
            let local = f64::from(moe.total_experts) / f64::from(config.ep.max(1));
            (local * f64::from(moe.expert_ffn_dim) + f64::from(moe.shared_expert_ffn_dim)) * gate * h / tpf
        }
    };
    let weight_bytes = layers * (attention + ffn) * hw.bytes_per_param;

    let tokens = work.kv_seq_len.div_ceil(u64::from(config.kvp.max(1))) as f64;
    let kv_bytes = f64::from(local_batch(config, work.batch))
        * layers
        * 2.0
        * f64::from(kv_heads_per_rank(model, config.tpa.max(1)))
        * f64::from(model.kv_head_dim())
        * tokens
        * hw.bytes_per_param;

    MemoryFootprint {
        weight_bytes,
        kv_bytes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::roofline_dense;

    #[test]
    fn kv_sharding_shrinks_footprint() {
        let hw = HardwareSpec::default();
        let model = ModelSpec {
            layers: 126,
            ..roofline_dense()
        };
        let work = WorkloadSpec::new(16, 1_000_000);
        let tp = memory_footprint(&ParallelismConfig::tp(8), &model, &work, &hw);
        let helix = memory_footprint(&ParallelismConfig::helix(8, 8, 64, 1), &model, &work, &hw);
        assert!((tp.kv_bytes / helix.kv_bytes - 8.0).abs() < 1e-12);
        assert!(helix.weight_bytes < tp.weight_bytes);
        // 16 requests * 126 layers * 2 * 128 * 1e6 * 0.5 bytes
        assert_eq!(tp.kv_bytes, 16.0 * 126.0 * 2.0 * 128.0 * 1e6 * 0.5);
        assert!(!tp.fits(&hw));
        assert!(helix.fits(&hw));
    }
}
