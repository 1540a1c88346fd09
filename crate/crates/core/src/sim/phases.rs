//! Attention-phase and FFN-phase latency for one layer.
//!
//! Every phase is charged `max(memory time, compute time)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::model::{kv_heads_per_rank, HardwareSpec, ModelSpec, MoeSpec, ParallelismConfig, Strategy, WorkloadSpec};
use crate::num::powf;
use crate::roofline;

use super::comm::{a2a_payload_bytes, comm_time, CollectiveKind};
use super::{check_inputs, LatencyBreakdown, SimError};

/// Requests one attention rank serves. Data-parallel attention spreads the
/// batch over all ranks, rounding up.
pub(crate) fn local_batch(config: &ParallelismConfig, batch: u32) -> u32 {
    match config.strategy {
        Strategy::EpDpAttention => batch.div_ceil(config.stage_gpus()),
        _ => batch,
    }
}

/// Size of the tensor-parallel group that runs the attention output
/// projection.
pub(crate) fn post_proj_group(config: &ParallelismConfig) -> u32 {
    match config.strategy {
        Strategy::Helix => config.kvp * config.tpa,
        Strategy::Tp | Strategy::TpPp | Strategy::MedhaKvp => config.tpa,
        Strategy::EpDpAttention => 1,
    }
}

fn roofline_time(bytes: f64, flops: f64, hw: &HardwareSpec) -> f64 {
    (bytes / hw.mem_bw).max(flops / hw.compute_throughput)
}

/// Q, K and V projection parameters one attention rank multiplies by.
/// Every KVP rank computes the full projections for its TPA slice.
pub(crate) fn qkv_params(model: &ModelSpec, tpa: u32) -> f64 {
    let h = f64::from(model.hidden_dim);
    let q = h * f64::from(model.query_heads / tpa) * f64::from(model.head_size);
    let kv = 2.0 * h * f64::from(kv_heads_per_rank(model, tpa)) * f64::from(model.kv_head_dim());
    q + kv
}

pub(crate) fn post_proj_params(model: &ModelSpec, group: u32) -> f64 {
    let h = f64::from(model.hidden_dim);
    h / f64::from(group) * h
}

/// Fills the attention side of the breakdown: `qkv_proj`, `kv_read`,
/// `attn_compute`, `a2a_comm`, `post_proj` and `attn_allreduce`.
pub fn attention_phase(
    config: &ParallelismConfig,
    model: &ModelSpec,
    work: &WorkloadSpec,
    hw: &HardwareSpec,
) -> Result<LatencyBreakdown, SimError> {
    check_inputs(config, model, work, hw)?;
    let bytes = hw.bytes_per_param;
    let b = local_batch(config, work.batch);
    let bf = f64::from(b);
    let h = f64::from(model.hidden_dim);

    let qkv = qkv_params(model, config.tpa);
    let qkv_proj = roofline_time(qkv * bytes, 2.0 * bf * qkv, hw);

    let local = work.with_batch(b);
    let kv_read = roofline::kv_read_time(model, &local, config.tpa, config.kvp, hw)?;
    let attn_flops = 2.0
        * bf
        * 2.0
        * f64::from(kv_heads_per_rank(model, config.tpa))
        * f64::from(model.kv_head_dim())
        * (work.kv_seq_len as f64 / f64::from(config.kvp));
    let attn_compute = attn_flops / hw.compute_throughput;

    let a2a_comm = if config.kvp > 1 {
        let payload = a2a_payload_bytes(model, b, config.kvp, config.tpa, hw)?;
        comm_time(CollectiveKind::AllToAll, config.kvp, payload.buffer_bytes(), hw)
    } else {
        0.0
    };

    let group = post_proj_group(config);
    let post = post_proj_params(model, group);
    let post_proj = roofline_time(post * bytes, 2.0 * bf * post, hw);
    let attn_allreduce = comm_time(CollectiveKind::AllReduce, group, bf * h * bytes, hw);

    Ok(LatencyBreakdown {
        qkv_proj,
        kv_read,
        attn_compute,
        a2a_comm,
        post_proj,
        attn_allreduce,
        layers: model.layers,
        ..LatencyBreakdown::default()
    })
}

/// Expected number of distinct local experts touched when `batch * k`
/// token-expert picks are spread uniformly over all experts.
pub fn expected_active_experts(moe: &MoeSpec, ep: u32, batch: u32) -> f64 {
    let total = f64::from(moe.total_experts);
    let local = total / f64::from(ep);
    let picks = f64::from(batch) * f64::from(moe.active_experts_per_token);
    let hit = local * (1.0 - powf(1.0 - 1.0 / total, picks));
    hit.min(local)
}

fn expert_params(model: &ModelSpec, ffn_dim: u32, tpf: u32) -> f64 {
    f64::from(model.ffn_gate_factor) * f64::from(model.hidden_dim) * f64::from(ffn_dim) / f64::from(tpf)
}

/// Fills the FFN side of the breakdown: `ffn_weight_read`, `ffn_compute` and
/// `moe_comm` (the collectives that close the FFN block).
pub fn ffn_phase(
    config: &ParallelismConfig,
    model: &ModelSpec,
    batch: u32,
    hw: &HardwareSpec,
) -> Result<LatencyBreakdown, SimError> {
    if config.tpf == 0 || config.ep == 0 {
        return Err(SimError::ZeroWidth);
    }
    let bytes = hw.bytes_per_param;
    let bf = f64::from(batch);
    let h = f64::from(model.hidden_dim);
    let act = bf * h * bytes;
    let tpf = config.tpf;

    // Data-parallel attention leaves each rank with its own requests, so
    // the tokens are gathered across the grid before the FFN.
    let dispatch = match config.strategy {
        Strategy::EpDpAttention => comm_time(CollectiveKind::AllGather, config.stage_gpus(), act, hw),
        _ => 0.0,
    };

    let (ffn_weight_read, ffn_compute, moe_comm) = match &model.moe {
        None => {
            if config.ep > 1 && config.strategy != Strategy::MedhaKvp {
                return Err(SimError::NotMoe);
            }
            let params = expert_params(model, model.ffn_dim, tpf);
            let flops = 2.0 * bf * params;
            let comm = comm_time(CollectiveKind::AllReduce, tpf, act, hw);
            (params * bytes / hw.mem_bw, flops / hw.compute_throughput, comm)
        }
        Some(moe) => {
            let active = expected_active_experts(moe, config.ep, batch);
            let routed = expert_params(model, moe.expert_ffn_dim, tpf);
            let shared = if moe.shared_expert_ffn_dim > 0 {
                expert_params(model, moe.shared_expert_ffn_dim, tpf)
            } else {
                0.0
            };
            let params = active * routed + shared;
            let token_picks = bf * f64::from(moe.active_experts_per_token) / f64::from(config.ep);
            let ep = f64::from(config.ep);
            let flops = 2.0 * routed * token_picks + 2.0 * shared * bf + bf * h * (ep - 1.0);
            let comm = comm_time(CollectiveKind::AllReduce, tpf, act, hw)
                + comm_time(CollectiveKind::AllGather, config.ep, act, hw);
            (params * bytes / hw.mem_bw, flops / hw.compute_throughput, comm)
        }
    };

    Ok(LatencyBreakdown {
        ffn_weight_read,
        ffn_compute,
        moe_comm: moe_comm + dispatch,
        layers: model.layers,
        ..LatencyBreakdown::default()
    })
}

/// Routed-expert parameters each GPU reads for an explicit token-to-expert
/// assignment. GPUs are numbered `group * tpf + lane`; expert `e` lives in
/// group `e / (experts / ep)`. Every GPU also reads its shard of the shared
/// expert.
pub fn expert_params_per_gpu(
    model: &ModelSpec,
    config: &ParallelismConfig,
    assignments: &[u32],
) -> Result<Vec<f64>, SimError> {
    let moe = model.moe.as_ref().ok_or(SimError::NotMoe)?;
    if config.ep == 0 || config.tpf == 0 || moe.total_experts % config.ep != 0 {
        return Err(SimError::ZeroWidth);
    }
    let local = moe.total_experts / config.ep;
    let mut hit = vec![false; moe.total_experts as usize];
    for &e in assignments {
        let slot = hit.get_mut(e as usize).ok_or(SimError::UnknownExpert(e))?;
        *slot = true;
    }
    let routed = expert_params(model, moe.expert_ffn_dim, config.tpf);
    let shared = if moe.shared_expert_ffn_dim > 0 {
        expert_params(model, moe.shared_expert_ffn_dim, config.tpf)
    } else {
        0.0
    };
    let mut out = Vec::with_capacity((config.ep * config.tpf) as usize);
    for group in 0..config.ep {
        let lo = (group * local) as usize;
        let distinct = hit[lo..lo + local as usize].iter().filter(|h| **h).count();
        for _lane in 0..config.tpf {
            out.push(distinct as f64 * routed + shared);
        }
    }
    Ok(out)
}
