//! Analytical decode-latency model for long-context LLM inference sharding
//! strategies, plus a desk-scale numerical harness for KV-parallel attention.
//!
//! The crate is `no_std` and only needs `alloc`. Everything here is a pure
//! function of its inputs; file formats, the CLI and parallel sweeps live in
//! the `helixsim` companion crate.
//!
//! Module map:
//! - [`model`]: model, hardware, workload and parallelism descriptors plus
//!   configuration validity rules.
//! - [`roofline`]: per-layer DRAM read times for KV cache and weights.
//! - [`sim`]: collective cost model, batch-wise overlap schedule and the
//!   end-to-end token-to-token latency composition.
//! - [`search`]: configuration enumeration, Pareto frontiers, batch
//!   scalability and frontier comparison.
//! - [`attention`]: exact sharded attention with log-sum-exp merging and
//!   round-robin KV growth.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod attention;
pub mod model;
pub mod roofline;
pub mod search;
pub mod sim;

mod num;

pub use model::{
    AttentionKind, HardwareSpec, ModelSpec, MoeSpec, ParallelismConfig, Strategy, Verdict,
    Violation, WorkloadSpec,
};
pub use search::{Frontier, ParetoPoint, SearchSpace};
pub use sim::{LatencyBreakdown, OverlapTimeline};
