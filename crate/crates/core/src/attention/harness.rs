//! In-process decode step: ranks are `(group, kvp_rank)` pairs exchanging
//! value-copied messages through a recorded mailbox.

use alloc::vec;
use alloc::vec::Vec;

use super::cache::{append_round_robin, KvShard, KvToken, ShardedKVCache};
use super::kernel::{head_fragment, merge_head, reference_attention, AttentionFragment};
use super::AttentionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnDims {
    pub query_heads: usize,
    pub kv_heads: usize,
    pub head_dim: usize,
}

impl AttnDims {
    pub fn hidden(&self) -> usize {
        self.query_heads * self.head_dim
    }

    fn kv_width(&self) -> usize {
        self.kv_heads * self.head_dim
    }

    fn queries_per_kv(&self) -> usize {
        self.query_heads / self.kv_heads
    }

    fn validate(&self) -> Result<(), AttentionError> {
        for (name, v) in [
            ("query_heads", self.query_heads),
            ("kv_heads", self.kv_heads),
            ("head_dim", self.head_dim),
        ] {
            if v == 0 {
                return Err(AttentionError::ZeroDim(name));
            }
        }
        if self.query_heads % self.kv_heads != 0 {
            return Err(AttentionError::NotDivisible {
                what: "query heads by KV heads",
                num: self.query_heads,
                den: self.kv_heads,
            });
        }
        Ok(())
    }
}

/// Row-major `hidden x out` projection matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeWeights {
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
}

impl DecodeWeights {
    fn validate(&self, dims: &AttnDims) -> Result<(), AttentionError> {
        let h = dims.hidden();
        for (what, expected, got) in [
            ("wq", h * h, self.wq.len()),
            ("wk", h * dims.kv_width(), self.wk.len()),
            ("wv", h * dims.kv_width(), self.wv.len()),
        ] {
            if expected != got {
                return Err(AttentionError::DimMismatch { what, expected, got });
            }
        }
        Ok(())
    }
}

fn project(x: &[f64], w: &[f64], out: usize) -> Vec<f64> {
    let mut y = vec![0.0; out];
    for (xi, row) in x.iter().zip(w.chunks_exact(out)) {
        for (yj, wij) in y.iter_mut().zip(row) {
            *yj += xi * wij;
        }
    }
    y
}

/// Partial attention of `queries` (head-major, consecutive query heads
/// starting at `first_query_head`) against one rank's shard.
pub fn shard_attention(
    queries: &[f64],
    first_query_head: usize,
    shard: &KvShard,
    dims: &AttnDims,
) -> Result<AttentionFragment, AttentionError> {
    let hd = dims.head_dim;
    if queries.len() % hd != 0 {
        return Err(AttentionError::NotDivisible {
            what: "query length by head_dim",
            num: queries.len(),
            den: hd,
        });
    }
    let heads = queries.len() / hd;
    let mut partial_out = Vec::with_capacity(queries.len());
    let mut lse = Vec::with_capacity(heads);
    let mut cached: Option<(usize, Vec<f64>, Vec<f64>)> = None;
    for i in 0..heads {
        let kv = (first_query_head + i) / dims.queries_per_kv();
        if cached.as_ref().map(|c| c.0) != Some(kv) {
            let (k, v) = shard.head(kv);
            cached = Some((kv, k, v));
        }
        let (_, k, v) = cached.as_ref().expect("head loaded");
        let (o, l) = head_fragment(&queries[i * hd..(i + 1) * hd], k, v)?;
        partial_out.extend(o);
        lse.push(l);
    }
    Ok(AttentionFragment {
        head_dim: hd,
        partial_out,
        lse,
    })
}

/// Monolithic attention for every query head over the whole cache.
pub fn reference_decode(cache: &ShardedKVCache, query: &[f64], dims: &AttnDims) -> Result<Vec<f64>, AttentionError> {
    let (keys, values) = cache.concatenated();
    let hd = dims.head_dim;
    let mut out = Vec::with_capacity(dims.hidden());
    for h in 0..dims.query_heads {
        let kv = h / dims.queries_per_kv();
        out.extend(reference_attention(&query[h * hd..(h + 1) * hd], &keys[kv], &values[kv])?);
    }
    Ok(out)
}

/// One all-to-all message. `payload` holds, per request, the output slice
/// followed by the log-sum-exp of each head the slice touches.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub group: usize,
    pub from: usize,
    pub to: usize,
    pub out_elements: usize,
    pub lse_elements: usize,
    pub payload: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Transcript {
    pub messages: Vec<Message>,
}

impl Transcript {
    pub fn message_count(&self) -> usize {
        self.messages.len()
    }

    /// `(group, from, to, out_elements, lse_elements)` per message.
    pub fn shape(&self) -> Vec<(usize, usize, usize, usize, usize)> {
        self.messages
            .iter()
            .map(|m| (m.group, m.from, m.to, m.out_elements, m.lse_elements))
            .collect()
    }

    pub fn total_elements(&self) -> usize {
        self.messages.iter().map(|m| m.out_elements + m.lse_elements).sum()
    }

    /// Largest element count any single destination receives from one peer.
    pub fn max_per_destination(&self) -> usize {
        self.messages
            .iter()
            .map(|m| m.out_elements + m.lse_elements)
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeStep {
    /// Attention output per request, `hidden` wide.
    pub outputs: Vec<Vec<f64>>,
    /// Projected queries per request, for checking against a reference.
    pub queries: Vec<Vec<f64>>,
    pub transcript: Transcript,
}

/// Head segments `(head, lo, hi)` of the element range `[start, end)` in a
/// head-major vector.
fn segments(start: usize, end: usize, hd: usize) -> Vec<(usize, usize, usize)> {
    let mut segs = Vec::new();
    let mut at = start;
    while at < end {
        let head = at / hd;
        let hi = ((head + 1) * hd).min(end);
        segs.push((head, at, hi));
        at = hi;
    }
    segs
}

/// Runs one decode step for a batch, one cache per request. Each tensor
/// group of `tpa` ranks owns `kv_heads / tpa` KV heads and the matching
/// query heads; within a group the `kvp` ranks hold sequence shards. After
/// local attention an all-to-all hands each rank a `hidden / (tpa * kvp)`
/// slice of its group's heads, which it merges. The new token's K and V
/// are then appended round-robin.
pub fn simulate_decode_step(
    caches: &mut [ShardedKVCache],
    inputs: &[Vec<f64>],
    weights: &DecodeWeights,
    dims: &AttnDims,
    tpa: usize,
) -> Result<DecodeStep, AttentionError> {
    dims.validate()?;
    weights.validate(dims)?;
    if tpa == 0 {
        return Err(AttentionError::ZeroDim("tpa"));
    }
    if caches.is_empty() {
        return Err(AttentionError::ZeroDim("batch"));
    }
    if inputs.len() != caches.len() {
        return Err(AttentionError::DimMismatch {
            what: "inputs",
            expected: caches.len(),
            got: inputs.len(),
        });
    }
    if dims.kv_heads % tpa != 0 {
        return Err(AttentionError::NotDivisible {
            what: "KV heads by tpa",
            num: dims.kv_heads,
            den: tpa,
        });
    }
    let kvp = caches[0].kvp();
    for c in caches.iter() {
        if c.kvp() != kvp || c.kv_heads != dims.kv_heads || c.head_dim != dims.head_dim {
            return Err(AttentionError::MixedCaches);
        }
        if c.is_empty() {
            return Err(AttentionError::EmptyContext);
        }
    }
    let (h, hd) = (dims.hidden(), dims.head_dim);
    let group_width = h / tpa;
    if group_width % kvp != 0 {
        return Err(AttentionError::NotDivisible {
            what: "per-group hidden width by kvp",
            num: group_width,
            den: kvp,
        });
    }
    let slice = group_width / kvp;
    let group_heads = dims.query_heads / tpa;
    for x in inputs {
        if x.len() != h {
            return Err(AttentionError::DimMismatch {
                what: "input",
                expected: h,
                got: x.len(),
            });
        }
    }

    let queries: Vec<Vec<f64>> = inputs.iter().map(|x| project(x, &weights.wq, h)).collect();
    let batch = caches.len();
    let mut transcript = Transcript::default();
    let mut outputs = vec![vec![0.0; h]; batch];

    for g in 0..tpa {
        let first = g * group_heads;
        let block = first * hd..(first + group_heads) * hd;
        // local[r][b]: fragment of rank r for request b
        let mut local: Vec<Vec<AttentionFragment>> = Vec::with_capacity(kvp);
        for r in 0..kvp {
            let mut per_req = Vec::with_capacity(batch);
            for (cache, q) in caches.iter().zip(&queries) {
                per_req.push(shard_attention(&q[block.clone()], first, &cache.shards[r], dims)?);
            }
            local.push(per_req);
        }

        // mailbox[to] holds value-copied payloads in arrival order, local
        // delivery included
        let mut mailbox: Vec<Vec<(usize, Vec<f64>)>> = vec![Vec::new(); kvp];
        for (r, frags) in local.iter().enumerate() {
            for to in 0..kvp {
                let segs = segments(to * slice, (to + 1) * slice, hd);
                let mut payload = Vec::with_capacity(batch * (slice + segs.len()));
                for f in frags {
                    payload.extend_from_slice(&f.partial_out[to * slice..(to + 1) * slice]);
                    payload.extend(segs.iter().map(|s| f.lse[s.0]));
                }
                if to != r {
                    transcript.messages.push(Message {
                        group: g,
                        from: r,
                        to,
                        out_elements: batch * slice,
                        lse_elements: batch * segs.len(),
                        payload: payload.clone(),
                    });
                }
                mailbox[to].push((r, payload));
            }
        }

        for (to, inbox) in mailbox.iter().enumerate() {
            let segs = segments(to * slice, (to + 1) * slice, hd);
            let stride = slice + segs.len();
            for (b, out) in outputs.iter_mut().enumerate() {
                let base = b * stride;
                let mut offset = 0;
                for (si, &(_, lo, hi)) in segs.iter().enumerate() {
                    let width = hi - lo;
                    let mut parts: Vec<(f64, &[f64])> = inbox
                        .iter()
                        .map(|(_, p)| (p[base + slice + si], &p[base + offset..base + offset + width]))
                        .collect();
                    let (merged, _) = merge_head(&mut parts)?;
                    let dst = block.start + lo;
                    out[dst..dst + width].copy_from_slice(&merged);
                    offset += width;
                }
            }
        }
    }

    for (cache, x) in caches.iter_mut().zip(inputs) {
        let token = KvToken {
            keys: project(x, &weights.wk, dims.kv_width()),
            values: project(x, &weights.wv, dims.kv_width()),
        };
        append_round_robin(cache, &token)?;
    }

    Ok(DecodeStep {
        outputs,
        queries,
        transcript,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::kernel::max_rel_error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn setup(
        dims: AttnDims,
        kvp: usize,
        seq: usize,
        batch: usize,
        seed: u64,
    ) -> (Vec<ShardedKVCache>, Vec<Vec<f64>>, DecodeWeights) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = dims.hidden();
        let kvw = dims.kv_heads * dims.head_dim;
        let weights = DecodeWeights {
            wq: rand_vec(&mut rng, h * h),
            wk: rand_vec(&mut rng, h * kvw),
            wv: rand_vec(&mut rng, h * kvw),
        };
        let mut caches = Vec::new();
        for _ in 0..batch {
            let mut c = ShardedKVCache::new(kvp, dims.kv_heads, dims.head_dim, 16).unwrap();
            for _ in 0..seq {
                c.append(&KvToken {
                    keys: rand_vec(&mut rng, kvw),
                    values: rand_vec(&mut rng, kvw),
                })
                .unwrap();
            }
            caches.push(c);
        }
        let inputs = (0..batch).map(|_| rand_vec(&mut rng, h)).collect();
        (caches, inputs, weights)
    }

    fn check(dims: AttnDims, kvp: usize, tpa: usize, seq: usize, batch: usize) -> DecodeStep {
        let (mut caches, inputs, weights) = setup(dims, kvp, seq, batch, 3);
        let before = caches.clone();
        let step = simulate_decode_step(&mut caches, &inputs, &weights, &dims, tpa).unwrap();
        for (b, c) in before.iter().enumerate() {
            let r = reference_decode(c, &step.queries[b], &dims).unwrap();
            assert!(max_rel_error(&step.outputs[b], &r) < 1e-10);
        }
        for c in &caches {
            assert_eq!(c.len(), seq + 1);
        }
        step
    }

    #[test]
    fn single_rank_has_no_messages() {
        let dims = AttnDims {
            query_heads: 2,
            kv_heads: 1,
            head_dim: 4,
        };
        let step = check(dims, 1, 1, 10, 1);
        assert_eq!(step.transcript.message_count(), 0);
    }

    #[test]
    fn gqa_four_way_kvp_two_way_tp() {
        let dims = AttnDims {
            query_heads: 4,
            kv_heads: 2,
            head_dim: 8,
        };
        let (kvp, tpa) = (4, 2);
        let step = check(dims, kvp, tpa, 48, 1);
        assert_eq!(step.transcript.message_count(), tpa * kvp * (kvp - 1));
        for g in 0..tpa {
            let n = step.transcript.messages.iter().filter(|m| m.group == g).count();
            assert_eq!(n, kvp * (kvp - 1));
        }
        // H / (kvp * tpa) = 4 output elements, half a head, so one lse
        for m in &step.transcript.messages {
            assert_eq!(m.out_elements, 4);
            assert_eq!(m.lse_elements, 1);
            assert_eq!(m.payload.len(), 5);
        }
    }

    #[test]
    fn payload_grows_with_batch_not_sequence() {
        let dims = AttnDims {
            query_heads: 8,
            kv_heads: 4,
            head_dim: 4,
        };
        let short = check(dims, 2, 2, 5, 3).transcript.shape();
        let long = check(dims, 2, 2, 300, 3).transcript.shape();
        assert_eq!(short, long);
        // B * H / (kvp * tpa) + B * heads per slice
        assert!(short.iter().all(|s| s.3 == 3 * 8 && s.4 == 3 * 2));
    }

    #[test]
    fn dimension_errors() {
        let dims = AttnDims {
            query_heads: 4,
            kv_heads: 2,
            head_dim: 2,
        };
        let (mut caches, inputs, weights) = setup(dims, 2, 4, 1, 1);
        assert!(simulate_decode_step(&mut caches, &inputs, &weights, &dims, 4).is_err());
        assert!(simulate_decode_step(&mut caches, &[vec![0.0; 3]], &weights, &dims, 1).is_err());
        let mut empty = vec![ShardedKVCache::new(2, 2, 2, 16).unwrap()];
        assert_eq!(
            simulate_decode_step(&mut empty, &inputs, &weights, &dims, 1),
            Err(AttentionError::EmptyContext)
        );
    }

    #[test]
    fn repeated_steps_stay_exact() {
        let dims = AttnDims {
            query_heads: 4,
            kv_heads: 4,
            head_dim: 4,
        };
        let (mut caches, inputs, weights) = setup(dims, 4, 1, 2, 9);
        for _ in 0..40 {
            let before = caches.clone();
            let step = simulate_decode_step(&mut caches, &inputs, &weights, &dims, 1).unwrap();
            for (b, c) in before.iter().enumerate() {
                let r = reference_decode(c, &step.queries[b], &dims).unwrap();
                assert!(max_rel_error(&step.outputs[b], &r) < 1e-10);
            }
        }
        let t = caches[0].shard_tokens();
        assert!(t.iter().max().unwrap() - t.iter().min().unwrap() <= 16);
    }
}
