//! Per-layer DRAM read times for the KV cache and the weights.
//!
//! KV read time:
//!   `B * 2 * ceil(K / tpa) * Hkv * (S / kvp) * bytes_per_param / mem_bw`
//!
//! Weight read time (SwiGLU FFN):
//!   `(2*H*(Q/tpa)*Hsz + 2*H*ceil(K/tpa)*Hkv + gate*H*F/tpf) * bytes_per_param / mem_bw`
//!
//! The ceiling is where KV duplication shows up: once `tpa > K` every rank
//! holds a full KV head and reads stop shrinking.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{kv_heads_per_rank, HardwareSpec, ModelSpec, WorkloadSpec};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RooflineError {
    #[error("`{0}` must be at least 1")]
    ZeroWidth(&'static str),
    #[error("tpa={tpa} does not divide query_heads={query_heads}")]
    TpaNotDivisor { tpa: u32, query_heads: u32 },
    #[error("sweep range is empty")]
    EmptyRange,
    #[error("sweep range must be strictly ascending")]
    NotAscending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Tpa,
    Kvp,
    SeqLen,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Tpa => "tpa",
            SweepAxis::Kvp => "kvp",
            SweepAxis::SeqLen => "seq_len",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RooflineRow {
    pub axis: SweepAxis,
    pub value: u64,
    pub kv_read_time: f64,
    /// `None` when the swept attention width does not split the query heads
    /// evenly, in which case the weight formula is undefined.
    pub weight_read_time: Option<f64>,
}

pub fn kv_read_time(
    model: &ModelSpec,
    work: &WorkloadSpec,
    tpa: u32,
    kvp: u32,
    hw: &HardwareSpec,
) -> Result<f64, RooflineError> {
    Ok(kv_read_elements(model, work, tpa, kvp)? * hw.bytes_per_param / hw.mem_bw)
}

/// KV cache elements one rank streams per layer.
pub fn kv_read_elements(
    model: &ModelSpec,
    work: &WorkloadSpec,
    tpa: u32,
    kvp: u32,
) -> Result<f64, RooflineError> {
    nonzero(tpa, "tpa")?;
    nonzero(kvp, "kvp")?;
    let heads = f64::from(kv_heads_per_rank(model, tpa));
    let elems = f64::from(work.batch)
        * 2.0
        * heads
        * f64::from(model.kv_head_dim())
        * (work.kv_seq_len as f64 / f64::from(kvp));
    Ok(elems)
}

/// Query + output projection parameters held by one attention rank.
pub fn qo_params(model: &ModelSpec, tpa: u32) -> Result<f64, RooflineError> {
    nonzero(tpa, "tpa")?;
    if model.query_heads % tpa != 0 {
        return Err(RooflineError::TpaNotDivisor {
            tpa,
            query_heads: model.query_heads,
        });
    }
    let h = f64::from(model.hidden_dim);
    Ok(2.0 * h * f64::from(model.query_heads / tpa) * f64::from(model.head_size))
}

/// Key + value projection parameters held by one attention rank.
pub fn kv_proj_params(model: &ModelSpec, tpa: u32) -> Result<f64, RooflineError> {
    nonzero(tpa, "tpa")?;
    let h = f64::from(model.hidden_dim);
    Ok(2.0 * h * f64::from(kv_heads_per_rank(model, tpa)) * f64::from(model.kv_head_dim()))
}

/// Dense FFN parameters held by one rank at FFN width `tpf`.
pub fn ffn_params(model: &ModelSpec, tpf: u32) -> Result<f64, RooflineError> {
    nonzero(tpf, "tpf")?;
    Ok(f64::from(model.ffn_gate_factor) * f64::from(model.hidden_dim) * f64::from(model.ffn_dim)
        / f64::from(tpf))
}

pub fn weight_read_time(
    model: &ModelSpec,
    tpa: u32,
    tpf: u32,
    hw: &HardwareSpec,
) -> Result<f64, RooflineError> {
    let params = qo_params(model, tpa)? + kv_proj_params(model, tpa)? + ffn_params(model, tpf)?;
    Ok(params * hw.bytes_per_param / hw.mem_bw)
}

/// Sweeps one axis with the others pinned:
/// - `Tpa`: tied TP, `tpa = tpf = v`, `kvp = 1`.
/// - `SeqLen`: `tpa = tpf = K`, `kvp = 1`, `S = v`.
/// - `Kvp`: `tpa = K`, `kvp = v`, FFN re-provisioned to `tpf = K * v`.
pub fn sweep(
    model: &ModelSpec,
    work: &WorkloadSpec,
    hw: &HardwareSpec,
    axis: SweepAxis,
    values: &[u64],
) -> Result<Vec<RooflineRow>, RooflineError> {
    if values.is_empty() {
        return Err(RooflineError::EmptyRange);
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(RooflineError::NotAscending);
    }
    let k = model.effective_kv_heads().min(model.query_heads);
    values
        .iter()
        .map(|&value| {
            let (tpa, kvp, tpf, w) = match axis {
                SweepAxis::Tpa => {
                    let t = width(value, "tpa")?;
                    (t, 1, t, work.clone())
                }
                SweepAxis::SeqLen => {
                    let w = WorkloadSpec {
                        kv_seq_len: value,
                        ..work.clone()
                    };
                    (k, 1, k, w)
                }
                SweepAxis::Kvp => {
                    let v = width(value, "kvp")?;
                    (k, v, k.saturating_mul(v), work.clone())
                }
            };
            let kv = kv_read_time(model, &w, tpa, kvp, hw)?;
            let weights = match weight_read_time(model, tpa, tpf, hw) {
                Ok(t) => Some(t),
                Err(RooflineError::TpaNotDivisor { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(RooflineRow {
                axis,
                value,
                kv_read_time: kv,
                weight_read_time: weights,
            })
        })
        .collect()
}

fn width(value: u64, name: &'static str) -> Result<u32, RooflineError> {
    match u32::try_from(value) {
        Ok(0) | Err(_) => Err(RooflineError::ZeroWidth(name)),
        Ok(v) => Ok(v),
    }
}

fn nonzero(v: u32, name: &'static str) -> Result<(), RooflineError> {
    if v == 0 {
        Err(RooflineError::ZeroWidth(name))
    } else {
        Ok(())
    }
}
