//! End-to-end token-to-token latency (TTL) for every sharding strategy.
//!
//! Per layer:
//!
//! ```text
//! layer = qkv_proj
//!       + max(kv_read, attn_compute)
//!       + a2a_exposed + attn_allreduce_exposed
//!       + post_proj
//!       + max(ffn_weight_read, ffn_compute)
//!       + moe_comm
//! ttl   = layers * layer + token_broadcast + pipeline_transfer
//! ```
//!
//! The attention output collectives (All-to-All plus the projection
//! All-Reduce) are pipelined against per-request attention compute with
//! [`hopb_span`] when overlap is enabled. The exposed remainder is split
//! between the two collectives in proportion to their raw cost. The
//! vanilla-KVP baseline never overlaps.

mod capacity;
mod comm;
mod overlap;
mod phases;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_config, HardwareError, HardwareSpec, ModelError, ModelSpec, ParallelismConfig,
    Strategy, Violation, WorkloadError, WorkloadSpec,
};
use crate::roofline::RooflineError;

pub use capacity::{memory_footprint, MemoryFootprint};
pub use comm::{a2a_payload_bytes, comm_time, A2aPayload, CollectiveKind, CommEvent};
pub use overlap::{hopb_schedule, hopb_span, OverlapTimeline, RequestEvent};
pub use phases::{attention_phase, expected_active_experts, expert_params_per_gpu, ffn_phase};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(Violation),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Hardware(#[from] HardwareError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Roofline(#[from] RooflineError),
    #[error("parallel widths must be at least 1")]
    ZeroWidth,
    #[error("hidden_dim={hidden} is not divisible by kvp x tpa = {group}")]
    HiddenNotDivisible { hidden: u32, group: u32 },
    #[error("expert-parallel FFN requested for a model without an MoE block")]
    NotMoe,
    #[error("token routed to unknown expert {0}")]
    UnknownExpert(u32),
}

/// Per-layer phase times (seconds) and the composed TTL. `ttl` covers the
/// whole model for one decode step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub qkv_proj: f64,
    pub kv_read: f64,
    pub attn_compute: f64,
    pub a2a_comm: f64,
    pub a2a_exposed: f64,
    pub post_proj: f64,
    pub attn_allreduce: f64,
    pub attn_allreduce_exposed: f64,
    pub ffn_weight_read: f64,
    pub ffn_compute: f64,
    pub moe_comm: f64,
    /// Once per step: new token broadcast to all KVP ranks.
    pub token_broadcast: f64,
    /// Once per step: activations handed between pipeline stages.
    pub pipeline_transfer: f64,
    pub layers: u32,
    pub ttl: f64,
}

impl LatencyBreakdown {
    pub fn attention_core(&self) -> f64 {
        self.kv_read.max(self.attn_compute)
    }

    pub fn ffn_core(&self) -> f64 {
        self.ffn_weight_read.max(self.ffn_compute)
    }

    /// Exposed time of one layer.
    pub fn layer_time(&self) -> f64 {
        self.qkv_proj
            + self.attention_core()
            + self.a2a_exposed
            + self.attn_allreduce_exposed
            + self.post_proj
            + self.ffn_core()
            + self.moe_comm
    }

    pub fn components(&self) -> [(&'static str, f64); 13] {
        [
            ("qkv_proj", self.qkv_proj),
            ("kv_read", self.kv_read),
            ("attn_compute", self.attn_compute),
            ("a2a_comm", self.a2a_comm),
            ("a2a_exposed", self.a2a_exposed),
            ("post_proj", self.post_proj),
            ("attn_allreduce", self.attn_allreduce),
            ("attn_allreduce_exposed", self.attn_allreduce_exposed),
            ("ffn_weight_read", self.ffn_weight_read),
            ("ffn_compute", self.ffn_compute),
            ("moe_comm", self.moe_comm),
            ("token_broadcast", self.token_broadcast),
            ("pipeline_transfer", self.pipeline_transfer),
        ]
    }
}

pub(crate) fn check_inputs(
    config: &ParallelismConfig,
    model: &ModelSpec,
    work: &WorkloadSpec,
    hw: &HardwareSpec,
) -> Result<(), SimError> {
    model.validate()?;
    hw.validate()?;
    work.validate()?;
    validate_config(config, model, hw)
        .into_result()
        .map_err(SimError::InvalidConfig)
}

/// Whether the strategy pipelines its attention collectives.
fn overlaps(strategy: Strategy) -> bool {
    !matches!(strategy, Strategy::MedhaKvp)
}

/// Composes both phases into one decode step.
pub fn decode_ttl(
    config: &ParallelismConfig,
    model: &ModelSpec,
    work: &WorkloadSpec,
    hw: &HardwareSpec,
    hopb_enabled: bool,
) -> Result<LatencyBreakdown, SimError> {
    let attn = attention_phase(config, model, work, hw)?;
    let ffn = ffn_phase(config, model, work.batch, hw)?;
    let mut out = LatencyBreakdown {
        ffn_weight_read: ffn.ffn_weight_read,
        ffn_compute: ffn.ffn_compute,
        moe_comm: ffn.moe_comm,
        ..attn
    };

    let comm = out.a2a_comm + out.attn_allreduce;
    if comm > 0.0 {
        let requests = phases::local_batch(config, work.batch);
        let core = out.attention_core();
        let enabled = hopb_enabled && overlaps(config.strategy);
        let r = f64::from(requests);
        let span = hopb_span(requests, core / r, comm / r, enabled);
        let exposed = (span - core).clamp(0.0, comm);
        let share = exposed / comm;
        out.a2a_exposed = (out.a2a_comm * share).min(out.a2a_comm);
        out.attn_allreduce_exposed = (out.attn_allreduce * share).min(out.attn_allreduce);
    }

    let act = f64::from(work.batch) * f64::from(model.hidden_dim) * hw.bytes_per_param;
    out.token_broadcast = comm_time(CollectiveKind::Broadcast, config.kvp, act, hw);
    // Point-to-point hand-off between consecutive stages.
    out.pipeline_transfer =
        f64::from(config.pp.saturating_sub(1)) * comm_time(CollectiveKind::Broadcast, 2, act, hw);

    out.layers = model.layers;
    out.ttl = f64::from(model.layers) * out.layer_time() + out.token_broadcast + out.pipeline_transfer;
    Ok(out)
}

/// Overlap timeline of the attention collectives for one layer, as used by
/// [`decode_ttl`].
pub fn attention_timeline(
    config: &ParallelismConfig,
    model: &ModelSpec,
    work: &WorkloadSpec,
    hw: &HardwareSpec,
    hopb_enabled: bool,
) -> Result<OverlapTimeline, SimError> {
    let attn = attention_phase(config, model, work, hw)?;
    let requests = phases::local_batch(config, work.batch);
    let r = f64::from(requests);
    let comm = attn.a2a_comm + attn.attn_allreduce;
    Ok(hopb_schedule(
        requests,
        attn.attention_core() / r,
        comm / r,
        hopb_enabled && overlaps(config.strategy),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{gqa_moe, mla_moe, roofline_dense};
    use proptest::prelude::{prop_assert, prop_assert_eq, prop_oneof, proptest};
    use proptest::strategy::Strategy as _;

    fn llama_like() -> ModelSpec {
        ModelSpec {
            layers: 8,
            ..roofline_dense()
        }
    }

    #[test]
    fn single_gpu_ttl_is_sum_of_local_phases() {
        let hw = HardwareSpec::default();
        let model = llama_like();
        let work = WorkloadSpec::new(4, 100_000);
        let b = decode_ttl(&ParallelismConfig::tp(1), &model, &work, &hw, true).unwrap();
        assert_eq!(b.a2a_comm + b.attn_allreduce + b.moe_comm + b.token_broadcast, 0.0);
        let expected = 8.0 * (b.qkv_proj + b.kv_read.max(b.attn_compute) + b.post_proj + b.ffn_core());
        assert!((b.ttl - expected).abs() <= 1e-15 * expected);
    }

    #[test]
    fn overlap_never_hurts() {
        let hw = HardwareSpec::default();
        let model = llama_like();
        let work = WorkloadSpec::new(16, 1_000_000);
        let c = ParallelismConfig::helix(8, 8, 64, 1);
        let on = decode_ttl(&c, &model, &work, &hw, true).unwrap();
        let off = decode_ttl(&c, &model, &work, &hw, false).unwrap();
        assert!(on.ttl < off.ttl);
        assert_eq!(off.a2a_exposed, off.a2a_comm);

        let single = ParallelismConfig::tp(1);
        let on = decode_ttl(&single, &model, &work, &hw, true).unwrap();
        let off = decode_ttl(&single, &model, &work, &hw, false).unwrap();
        assert_eq!(on.ttl, off.ttl);
    }

    #[test]
    fn medha_exposes_everything() {
        let hw = HardwareSpec::default();
        let model = llama_like();
        let work = WorkloadSpec::new(16, 1_000_000);
        let b = decode_ttl(&ParallelismConfig::medha(8, 8), &model, &work, &hw, true).unwrap();
        assert_eq!(b.a2a_exposed, b.a2a_comm);
        assert_eq!(b.attn_allreduce_exposed, b.attn_allreduce);
    }

    #[test]
    fn helix_reads_eight_times_less_kv_than_wide_tp() {
        let hw = HardwareSpec::default();
        let model = llama_like();
        let work = WorkloadSpec::new(8, 1_000_000);
        let helix = decode_ttl(&ParallelismConfig::helix(8, 8, 64, 1), &model, &work, &hw, true).unwrap();
        let tp = decode_ttl(&ParallelismConfig::tp(64), &model, &work, &hw, true).unwrap();
        assert!(((tp.kv_read / helix.kv_read) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn helix_with_kvp_one_matches_tied_tp() {
        let hw = HardwareSpec::default();
        let model = llama_like();
        let work = WorkloadSpec::new(32, 500_000);
        for w in [1, 2, 4, 8] {
            for hopb in [false, true] {
                let h = decode_ttl(&ParallelismConfig::helix(w, 1, w, 1), &model, &work, &hw, hopb).unwrap();
                let t = decode_ttl(&ParallelismConfig::tp(w), &model, &work, &hw, hopb).unwrap();
                assert_eq!(h, t);
            }
        }
    }

    #[test]
    fn invalid_config_is_an_error() {
        let hw = HardwareSpec::default();
        let r = decode_ttl(
            &ParallelismConfig::helix(16, 2, 32, 1),
            &llama_like(),
            &WorkloadSpec::new(1, 10),
            &hw,
            true,
        );
        assert!(matches!(r, Err(SimError::InvalidConfig(Violation::TpaExceedsKvHeads { .. }))));
    }

    #[test]
    fn pipeline_never_helps_latency() {
        let hw = HardwareSpec::default();
        let model = llama_like();
        let work = WorkloadSpec::new(4, 100_000);
        let tp = decode_ttl(&ParallelismConfig::tp(8), &model, &work, &hw, true).unwrap();
        let pp = decode_ttl(&ParallelismConfig::tp_pp(8, 4), &model, &work, &hw, true).unwrap();
        assert!(pp.ttl > tp.ttl);
        assert!(pp.pipeline_transfer > 0.0);
    }

    fn configs() -> impl proptest::strategy::Strategy<Value = (ModelSpec, ParallelismConfig)> {
        prop_oneof![
            (0u32..4, 0u32..4).prop_map(|(a, k)| {
                let (tpa, kvp) = (1 << a, 1 << k);
                (llama_like(), ParallelismConfig::helix(tpa, kvp, tpa * kvp, 1))
            }),
            (0u32..4, 0u32..3).prop_map(|(k, e)| {
                let (kvp, ep) = (1 << k, 1 << e);
                (mla_moe(), ParallelismConfig::helix(1, kvp, kvp / ep.min(kvp), ep.min(kvp)))
            }),
            (0u32..7).prop_map(|t| (llama_like(), ParallelismConfig::tp(1 << t))),
            (0u32..3, 0u32..3).prop_map(|(t, k)| (llama_like(), ParallelismConfig::medha(1 << t, 1 << k))),
            (0u32..3, 0u32..3).prop_map(|(t, e)| (gqa_moe(), ParallelismConfig::ep_dp(1 << t, 1 << e))),
            (0u32..3, 1u32..3).prop_map(|(t, p)| (llama_like(), ParallelismConfig::tp_pp(1 << t, 1 << p))),
        ]
    }

    proptest! {
        #[test]
        fn ttl_monotone_in_seq_len_and_batch(
            (model, config) in configs(),
            batch in 1u32..256,
            seq in 1u64..2_000_000,
            hopb: bool,
        ) {
            let hw = HardwareSpec::default();
            let base = decode_ttl(&config, &model, &WorkloadSpec::new(batch, seq), &hw, hopb).unwrap();
            let more_s = decode_ttl(&config, &model, &WorkloadSpec::new(batch, seq * 2), &hw, hopb).unwrap();
            let more_b = decode_ttl(&config, &model, &WorkloadSpec::new(batch + 1, seq), &hw, hopb).unwrap();
            prop_assert!(more_s.ttl >= base.ttl);
            prop_assert!(more_b.ttl >= base.ttl, "{} -> {}", base.ttl, more_b.ttl);
        }

        #[test]
        fn breakdown_is_consistent(
            (model, config) in configs(),
            batch in 1u32..512,
            seq in 1u64..2_000_000,
            hopb: bool,
        ) {
            let hw = HardwareSpec::default();
            let b = decode_ttl(&config, &model, &WorkloadSpec::new(batch, seq), &hw, hopb).unwrap();
            for (name, v) in b.components() {
                prop_assert!(v >= 0.0 && v.is_finite(), "{name} = {v}");
                prop_assert!(b.ttl >= v, "{name} exceeds ttl");
            }
            prop_assert!(b.a2a_exposed <= b.a2a_comm);
            prop_assert!(b.attn_allreduce_exposed <= b.attn_allreduce);
            let recomposed = f64::from(b.layers) * b.layer_time() + b.token_broadcast + b.pipeline_transfer;
            prop_assert_eq!(recomposed, b.ttl);
        }

        #[test]
        fn a2a_payload_independent_of_seq_len(batch in 1u32..1024, k in 0u32..4, a in 0u32..4) {
            let hw = HardwareSpec::default();
            let model = llama_like();
            let p1 = a2a_payload_bytes(&model, batch, 1 << k, 1 << a, &hw).unwrap();
            let p2 = a2a_payload_bytes(&model, batch, 1 << k, 1 << a, &hw).unwrap();
            prop_assert_eq!(p1, p2);
            let c = ParallelismConfig::helix(1 << a, 1 << k, (1 << a) * (1 << k), 1);
            let s1 = attention_phase(&c, &model, &WorkloadSpec::new(batch, 100_000), &hw).unwrap();
            let s2 = attention_phase(&c, &model, &WorkloadSpec::new(batch, 1_000_000), &hw).unwrap();
            prop_assert_eq!(s1.a2a_comm, s2.a2a_comm);
        }
    }
}
