//! Exactness harness for sequence-sharded attention: per-shard partial
//! outputs with log-sum-exp scalars, merged after a simulated all-to-all.

mod cache;
pub mod fuzz;
mod harness;
mod kernel;

use thiserror::Error;

pub use cache::{append_round_robin, KvChunk, KvShard, KvToken, ShardedKVCache, DEFAULT_CHUNK};
pub use harness::{
    reference_decode, shard_attention, simulate_decode_step, AttnDims, DecodeStep, DecodeWeights, Message,
    Transcript,
};
pub use kernel::{
    max_rel_error, merge_fragments, reference_attention, AttentionFragment, FragmentAccumulator,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttentionError {
    #[error("attention over an empty context")]
    EmptyContext,
    #[error("every fragment is empty; nothing to merge")]
    AllEmpty,
    #[error("`{0}` must be at least 1")]
    ZeroDim(&'static str),
    #[error("{what}: expected length {expected}, got {got}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{what}: {num} is not divisible by {den}")]
    NotDivisible {
        what: &'static str,
        num: usize,
        den: usize,
    },
    #[error("split covers {got} tokens but the context has {expected}")]
    BadSplit { expected: usize, got: usize },
    #[error("caches in one step must share the same layout")]
    MixedCaches,
}
