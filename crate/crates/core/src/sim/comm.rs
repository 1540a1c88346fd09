//! Alpha-beta collective cost model with ring collectives.

use serde::{Deserialize, Serialize};

use crate::model::{HardwareSpec, ModelSpec};

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectiveKind {
    AllToAll,
    AllReduce,
    AllGather,
    Broadcast,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommEvent {
    pub kind: CollectiveKind,
    pub group_size: u32,
    pub bytes_per_gpu: f64,
    pub time: f64,
}

impl CommEvent {
    pub fn new(kind: CollectiveKind, group_size: u32, bytes_per_gpu: f64, hw: &HardwareSpec) -> Self {
        Self {
            kind,
            group_size,
            bytes_per_gpu,
            time: comm_time(kind, group_size, bytes_per_gpu, hw),
        }
    }
}

/// Time for one collective over `group_size` GPUs, each holding
/// `payload_bytes` (the full per-GPU buffer). A group of one costs nothing.
pub fn comm_time(kind: CollectiveKind, group_size: u32, payload_bytes: f64, hw: &HardwareSpec) -> f64 {
    if group_size <= 1 {
        return 0.0;
    }
    let g = f64::from(group_size);
    let alpha = hw.link_latency;
    let beta = 1.0 / hw.link_bw;
    let frac = (g - 1.0) / g;
    match kind {
        CollectiveKind::AllToAll => alpha + payload_bytes * frac * beta,
        CollectiveKind::AllReduce => alpha * 2.0 * (g - 1.0) + 2.0 * payload_bytes * frac * beta,
        CollectiveKind::AllGather => alpha * (g - 1.0) + payload_bytes * frac * beta,
        CollectiveKind::Broadcast => alpha + payload_bytes * beta,
    }
}

/// Size of the attention All-to-All on one KVP rank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct A2aPayload {
    /// Bytes sent to each peer: a `B x H/(kvp*tpa)` slice of partial outputs
    /// plus one log-sum-exp scalar per head in the slice.
    pub per_destination: f64,
    pub destinations: u32,
    /// `per_destination * (kvp - 1)`.
    pub total_send: f64,
}

impl A2aPayload {
    /// Per-GPU buffer as seen by [`comm_time`]: one slice per group member.
    pub fn buffer_bytes(&self) -> f64 {
        self.per_destination * f64::from(self.destinations + 1)
    }
}

pub fn a2a_payload_bytes(
    model: &ModelSpec,
    batch: u32,
    kvp: u32,
    tpa: u32,
    hw: &HardwareSpec,
) -> Result<A2aPayload, SimError> {
    let group = kvp.checked_mul(tpa).filter(|g| *g > 0).ok_or(SimError::ZeroWidth)?;
    if model.hidden_dim % group != 0 {
        return Err(SimError::HiddenNotDivisible {
            hidden: model.hidden_dim,
            group,
        });
    }
    let slice = f64::from(model.hidden_dim / group);
    let lse_overhead = 1.0 / f64::from(model.head_size);
    let per_destination = f64::from(batch) * slice * (1.0 + lse_overhead) * hw.bytes_per_param;
    let destinations = kvp - 1;
    Ok(A2aPayload {
        per_destination,
        destinations,
        total_send: per_destination * f64::from(destinations),
    })
}
