use alloc::vec;
use alloc::vec::Vec;

use super::AttentionError;

pub const DEFAULT_CHUNK: usize = 16;

/// One token's keys and values for every KV head, head-major
/// (`kv_heads * head_dim` each).
#[derive(Debug, Clone, PartialEq)]
pub struct KvToken {
    pub keys: Vec<f64>,
    pub values: Vec<f64>,
}

/// Contiguous run of tokens stored on one rank. `keys[h]` and `values[h]`
/// are `tokens x head_dim` row-major matrices for KV head `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct KvChunk {
    /// Global position of the first token.
    pub start: usize,
    pub tokens: usize,
    pub keys: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

impl KvChunk {
    fn empty(start: usize, kv_heads: usize) -> Self {
        Self {
            start,
            tokens: 0,
            keys: vec![Vec::new(); kv_heads],
            values: vec![Vec::new(); kv_heads],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KvShard {
    pub rank: usize,
    pub chunks: Vec<KvChunk>,
}

impl KvShard {
    pub fn tokens(&self) -> usize {
        self.chunks.iter().map(|c| c.tokens).sum()
    }

    /// Keys and values of one head across all chunks, in storage order.
    pub fn head(&self, head: usize) -> (Vec<f64>, Vec<f64>) {
        let mut k = Vec::new();
        let mut v = Vec::new();
        for c in &self.chunks {
            k.extend_from_slice(&c.keys[head]);
            v.extend_from_slice(&c.values[head]);
        }
        (k, v)
    }
}

/// KV cache sharded along the sequence across `kvp` ranks.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardedKVCache {
    pub kv_heads: usize,
    pub head_dim: usize,
    pub chunk_size: usize,
    /// Rank receiving the next append.
    pub cursor: usize,
    /// Tokens already placed in the cursor rank's open chunk.
    fill: usize,
    pub shards: Vec<KvShard>,
    len: usize,
}

impl ShardedKVCache {
    pub fn new(kvp: usize, kv_heads: usize, head_dim: usize, chunk_size: usize) -> Result<Self, AttentionError> {
        for (name, v) in [
            ("kvp", kvp),
            ("kv_heads", kv_heads),
            ("head_dim", head_dim),
            ("chunk_size", chunk_size),
        ] {
            if v == 0 {
                return Err(AttentionError::ZeroDim(name));
            }
        }
        Ok(Self {
            kv_heads,
            head_dim,
            chunk_size,
            cursor: 0,
            fill: 0,
            shards: (0..kvp).map(|rank| KvShard { rank, chunks: Vec::new() }).collect(),
            len: 0,
        })
    }

    /// Places a flat sequence onto ranks as contiguous blocks of the given
    /// sizes (zero allowed). `keys[h]` is the `seq x head_dim` matrix of
    /// head `h`. Later appends start a fresh chunk on rank 0.
    pub fn from_split(
        keys: &[Vec<f64>],
        values: &[Vec<f64>],
        head_dim: usize,
        split: &[usize],
    ) -> Result<Self, AttentionError> {
        let mut cache = Self::new(split.len(), keys.len(), head_dim, DEFAULT_CHUNK)?;
        if values.len() != keys.len() {
            return Err(AttentionError::DimMismatch {
                what: "value heads",
                expected: keys.len(),
                got: values.len(),
            });
        }
        let seq = keys[0].len() / head_dim;
        for (what, m) in keys.iter().map(|k| ("keys", k)).chain(values.iter().map(|v| ("values", v))) {
            if m.len() != seq * head_dim {
                return Err(AttentionError::DimMismatch {
                    what,
                    expected: seq * head_dim,
                    got: m.len(),
                });
            }
        }
        let total: usize = split.iter().sum();
        if total != seq {
            return Err(AttentionError::BadSplit { expected: seq, got: total });
        }
        let mut start = 0;
        for (rank, &n) in split.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let span = start * head_dim..(start + n) * head_dim;
            cache.shards[rank].chunks.push(KvChunk {
                start,
                tokens: n,
                keys: keys.iter().map(|k| k[span.clone()].to_vec()).collect(),
                values: values.iter().map(|v| v[span.clone()].to_vec()).collect(),
            });
            start += n;
        }
        cache.len = seq;
        Ok(cache)
    }

    pub fn kvp(&self) -> usize {
        self.shards.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn shard_tokens(&self) -> Vec<usize> {
        self.shards.iter().map(KvShard::tokens).collect()
    }

    /// Per-head keys and values in global token order.
    pub fn concatenated(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut chunks: Vec<&KvChunk> = self.shards.iter().flat_map(|s| s.chunks.iter()).collect();
        chunks.sort_by_key(|c| c.start);
        let mut keys = vec![Vec::with_capacity(self.len * self.head_dim); self.kv_heads];
        let mut values = keys.clone();
        for c in chunks {
            for h in 0..self.kv_heads {
                keys[h].extend_from_slice(&c.keys[h]);
                values[h].extend_from_slice(&c.values[h]);
            }
        }
        (keys, values)
    }

    fn check_token(&self, token: &KvToken) -> Result<(), AttentionError> {
        let width = self.kv_heads * self.head_dim;
        for (what, got) in [("token keys", token.keys.len()), ("token values", token.values.len())] {
            if got != width {
                return Err(AttentionError::DimMismatch {
                    what,
                    expected: width,
                    got,
                });
            }
        }
        Ok(())
    }
}

/// Appends one token to the cursor rank's open chunk. After `chunk_size`
/// tokens on one rank the cursor moves to the next rank, wrapping.
pub fn append_round_robin(cache: &mut ShardedKVCache, token: &KvToken) -> Result<(), AttentionError> {
    cache.check_token(token)?;
    let (hd, heads, start) = (cache.head_dim, cache.kv_heads, cache.len);
    let shard = &mut cache.shards[cache.cursor];
    if cache.fill == 0 {
        shard.chunks.push(KvChunk::empty(start, heads));
    }
    let chunk = shard.chunks.last_mut().expect("open chunk");
    for h in 0..heads {
        chunk.keys[h].extend_from_slice(&token.keys[h * hd..(h + 1) * hd]);
        chunk.values[h].extend_from_slice(&token.values[h * hd..(h + 1) * hd]);
    }
    chunk.tokens += 1;
    cache.len += 1;
    cache.fill += 1;
    if cache.fill == cache.chunk_size {
        cache.fill = 0;
        cache.cursor = (cache.cursor + 1) % cache.shards.len();
    }
    Ok(())
}

impl ShardedKVCache {
    pub fn append(&mut self, token: &KvToken) -> Result<(), AttentionError> {
        append_round_robin(self, token)
    }
}
