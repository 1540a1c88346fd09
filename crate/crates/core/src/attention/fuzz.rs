//! Seeded random instances checking that sharded attention reproduces the
//! monolithic result.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cache::{KvToken, ShardedKVCache};
use super::harness::{reference_decode, shard_attention, simulate_decode_step, AttnDims, DecodeWeights};
use super::kernel::{max_rel_error, merge_fragments, reference_attention, AttentionFragment, FragmentAccumulator};
use super::AttentionError;

pub const TOLERANCE: f64 = 1e-10;
pub const MAX_HEAD_DIM: usize = 64;
pub const MAX_SEQ: usize = 512;
pub const MAX_KVP: usize = 8;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FuzzReport {
    pub trials: usize,
    pub seed: u64,
    /// Merged shards against the monolithic reference.
    pub max_rel_error: f64,
    /// Two different splits of the same context against each other.
    pub max_split_error: f64,
    /// Merging merged groups against merging everything at once.
    pub max_nested_error: f64,
    /// Full decode step against the reference.
    pub max_decode_error: f64,
    pub permutation_mismatches: usize,
    pub regroup_mismatches: usize,
    pub message_count_mismatches: usize,
    pub balance_violations: usize,
    pub messages: usize,
    pub message_elements: usize,
    pub max_elements_per_destination: usize,
}

impl FuzzReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
            && self.max_split_error <= tolerance
            && self.max_nested_error <= tolerance
            && self.max_decode_error <= tolerance
            && self.permutation_mismatches == 0
            && self.regroup_mismatches == 0
            && self.message_count_mismatches == 0
            && self.balance_violations == 0
    }
}

fn rand_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Random sizes summing to `total` over `parts` ranks; zeros allowed.
fn uneven_split<R: Rng>(rng: &mut R, total: usize, parts: usize) -> Vec<usize> {
    let mut cuts: Vec<usize> = (0..parts - 1).map(|_| rng.random_range(0..=total)).collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut prev = 0;
    for c in cuts {
        out.push(c - prev);
        prev = c;
    }
    out.push(total - prev);
    out
}

fn fragments(q: &[f64], cache: &ShardedKVCache, dims: &AttnDims) -> Result<Vec<AttentionFragment>, AttentionError> {
    cache.shards.iter().map(|s| shard_attention(q, 0, s, dims)).collect()
}

fn kernel_trial<R: Rng>(rng: &mut R, report: &mut FuzzReport) -> Result<(), AttentionError> {
    let hd = rng.random_range(4..=MAX_HEAD_DIM);
    let seq = rng.random_range(1..=MAX_SEQ);
    let kvp = rng.random_range(1..=MAX_KVP);
    // wide logit range so the max-subtraction matters
    let scale = [0.5, 2.0, 6.0][rng.random_range(0..3)];
    let dims = AttnDims {
        query_heads: 1,
        kv_heads: 1,
        head_dim: hd,
    };
    let q = rand_vec(rng, hd, scale);
    let keys = [rand_vec(rng, seq * hd, scale)];
    let values = [rand_vec(rng, seq * hd, 1.0)];

    let reference = reference_attention(&q, &keys[0], &values[0])?;
    let split = uneven_split(rng, seq, kvp);
    let cache = ShardedKVCache::from_split(&keys, &values, hd, &split)?;
    let frags = fragments(&q, &cache, &dims)?;
    let merged = merge_fragments(&frags)?;
    report.max_rel_error = report.max_rel_error.max(max_rel_error(&merged.partial_out, &reference));

    let other = ShardedKVCache::from_split(&keys, &values, hd, &uneven_split(rng, seq, kvp))?;
    let other_merged = merge_fragments(&fragments(&q, &other, &dims)?)?;
    report.max_split_error = report
        .max_split_error
        .max(max_rel_error(&other_merged.partial_out, &merged.partial_out));

    let mut shuffled = frags.clone();
    shuffled.shuffle(rng);
    if merge_fragments(&shuffled)? != merged {
        report.permutation_mismatches += 1;
    }

    // random contiguous grouping of the shuffled fragments
    let n_groups = rng.random_range(1..=shuffled.len());
    let groups = uneven_split(rng, shuffled.len(), n_groups);
    let mut acc = FragmentAccumulator::new();
    let mut nested = Vec::new();
    let mut at = 0;
    for n in groups {
        let part = &shuffled[at..at + n];
        at += n;
        if part.is_empty() {
            continue;
        }
        let mut sub = FragmentAccumulator::new();
        part.iter().for_each(|f| sub.push(f.clone()));
        acc.absorb(sub);
        if part.iter().any(|f| !f.is_empty()) {
            nested.push(merge_fragments(part)?);
        }
    }
    if acc.finish()? != merged {
        report.regroup_mismatches += 1;
    }
    let nested = merge_fragments(&nested)?;
    report.max_nested_error = report
        .max_nested_error
        .max(max_rel_error(&nested.partial_out, &merged.partial_out));
    Ok(())
}

fn decode_trial<R: Rng>(rng: &mut R, report: &mut FuzzReport) -> Result<(), AttentionError> {
    let kv_heads = [1usize, 2, 4][rng.random_range(0..3)];
    let query_heads = kv_heads * rng.random_range(1..=2);
    let head_dim = 4 * rng.random_range(1..=4);
    let dims = AttnDims {
        query_heads,
        kv_heads,
        head_dim,
    };
    let tpas: Vec<usize> = (1..=kv_heads).filter(|t| kv_heads % t == 0).collect();
    let tpa = tpas[rng.random_range(0..tpas.len())];
    let group_width = dims.hidden() / tpa;
    let kvps: Vec<usize> = (1..=MAX_KVP).filter(|k| group_width % k == 0).collect();
    let kvp = kvps[rng.random_range(0..kvps.len())];
    let batch = rng.random_range(1..=2);
    let seq = rng.random_range(1..=128);
    let chunk = rng.random_range(1..=16);

    let h = dims.hidden();
    let kvw = kv_heads * head_dim;
    let weights = DecodeWeights {
        wq: rand_vec(rng, h * h, 0.3),
        wk: rand_vec(rng, h * kvw, 0.3),
        wv: rand_vec(rng, h * kvw, 0.3),
    };
    let mut caches = Vec::with_capacity(batch);
    for _ in 0..batch {
        let mut c = ShardedKVCache::new(kvp, kv_heads, head_dim, chunk)?;
        for _ in 0..seq {
            c.append(&KvToken {
                keys: rand_vec(rng, kvw, 2.0),
                values: rand_vec(rng, kvw, 1.0),
            })?;
        }
        caches.push(c);
    }
    let inputs: Vec<Vec<f64>> = (0..batch).map(|_| rand_vec(rng, h, 1.0)).collect();
    let before = caches.clone();
    let step = simulate_decode_step(&mut caches, &inputs, &weights, &dims, tpa)?;
    for (b, c) in before.iter().enumerate() {
        let r = reference_decode(c, &step.queries[b], &dims)?;
        report.max_decode_error = report.max_decode_error.max(max_rel_error(&step.outputs[b], &r));
    }
    for c in &caches {
        let t = c.shard_tokens();
        let spread = t.iter().max().copied().unwrap_or(0) - t.iter().min().copied().unwrap_or(0);
        if spread > c.chunk_size {
            report.balance_violations += 1;
        }
    }
    let t = &step.transcript;
    if t.message_count() != tpa * kvp * (kvp - 1) {
        report.message_count_mismatches += 1;
    }
    report.messages += t.message_count();
    report.message_elements += t.total_elements();
    report.max_elements_per_destination = report.max_elements_per_destination.max(t.max_per_destination());
    Ok(())
}

/// Runs `trials` kernel instances and `trials` decode-step instances.
pub fn run(seed: u64, trials: usize) -> Result<FuzzReport, AttentionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FuzzReport {
        trials,
        seed,
        ..FuzzReport::default()
    };
    for _ in 0..trials {
        kernel_trial(&mut rng, &mut report)?;
        decode_trial(&mut rng, &mut report)?;
    }
    Ok(report)
}
