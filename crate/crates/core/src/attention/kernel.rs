use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::AttentionError;
use crate::num::{exp, ln, sqrt};

fn scaled_logits(q: &[f64], keys: &[f64]) -> Vec<f64> {
    let hd = q.len();
    let scale = 1.0 / sqrt(hd as f64);
    keys.chunks_exact(hd)
        .map(|k| q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale)
        .collect()
}

/// Max-stabilized softmax over `logits` applied to `values`; returns the
/// weighted output and the log-sum-exp of the logits.
fn softmax_apply(logits: &[f64], values: &[f64], hd: usize) -> (Vec<f64>, f64) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![0.0; hd];
    let mut denom = 0.0;
    for (l, v) in logits.iter().zip(values.chunks_exact(hd)) {
        let w = exp(l - m);
        denom += w;
        for (o, x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    for o in &mut out {
        *o /= denom;
    }
    (out, m + ln(denom))
}

fn check_context(q: &[f64], keys: &[f64], values: &[f64]) -> Result<(), AttentionError> {
    let hd = q.len();
    if hd == 0 {
        return Err(AttentionError::ZeroDim("head_dim"));
    }
    if keys.len() % hd != 0 {
        return Err(AttentionError::NotDivisible {
            what: "key matrix length by head_dim",
            num: keys.len(),
            den: hd,
        });
    }
    if values.len() != keys.len() {
        return Err(AttentionError::DimMismatch {
            what: "values",
            expected: keys.len(),
            got: values.len(),
        });
    }
    Ok(())
}

/// Softmax attention of one query head over a `tokens x head_dim` context.
pub fn reference_attention(q: &[f64], keys: &[f64], values: &[f64]) -> Result<Vec<f64>, AttentionError> {
    check_context(q, keys, values)?;
    if keys.is_empty() {
        return Err(AttentionError::EmptyContext);
    }
    Ok(softmax_apply(&scaled_logits(q, keys), values, q.len()).0)
}

/// Partial output and log-sum-exp of one head on one shard. An empty shard
/// yields zeros and `-inf`.
pub(crate) fn head_fragment(q: &[f64], keys: &[f64], values: &[f64]) -> Result<(Vec<f64>, f64), AttentionError> {
    check_context(q, keys, values)?;
    if keys.is_empty() {
        return Ok((vec![0.0; q.len()], f64::NEG_INFINITY));
    }
    Ok(softmax_apply(&scaled_logits(q, keys), values, q.len()))
}

fn canonical(a: &(f64, &[f64]), b: &(f64, &[f64])) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| {
        a.1.iter()
            .zip(b.1)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Rescales and sums partials of a single head (or a slice of one). Parts
/// are reduced in a canonical order so the result does not depend on the
/// order they arrive in.
pub(crate) fn merge_head(parts: &mut [(f64, &[f64])]) -> Result<(Vec<f64>, f64), AttentionError> {
    let m = parts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(AttentionError::AllEmpty);
    }
    parts.sort_by(canonical);
    let width = parts[0].1.len();
    let mut out = vec![0.0; width];
    let mut denom = 0.0;
    for (lse, p) in parts.iter() {
        let w = exp(lse - m);
        denom += w;
        for (o, x) in out.iter_mut().zip(p.iter()) {
            *o += w * x;
        }
    }
    for o in &mut out {
        *o /= denom;
    }
    Ok((out, m + ln(denom)))
}

/// Partial attention for a set of query heads: `partial_out` is head-major
/// (`lse.len() * head_dim`), one log-sum-exp per head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionFragment {
    pub head_dim: usize,
    pub partial_out: Vec<f64>,
    pub lse: Vec<f64>,
}

impl AttentionFragment {
    pub fn heads(&self) -> usize {
        self.lse.len()
    }

    pub fn head(&self, h: usize) -> &[f64] {
        &self.partial_out[h * self.head_dim..(h + 1) * self.head_dim]
    }

    pub fn is_empty(&self) -> bool {
        self.lse.iter().all(|l| *l == f64::NEG_INFINITY)
    }
}

/// Combines fragments over disjoint parts of one context. The result is a
/// fragment again, so merges can be nested.
pub fn merge_fragments(fragments: &[AttentionFragment]) -> Result<AttentionFragment, AttentionError> {
    let first = fragments.first().ok_or(AttentionError::AllEmpty)?;
    let (heads, hd) = (first.heads(), first.head_dim);
    for f in fragments {
        if f.heads() != heads || f.head_dim != hd || f.partial_out.len() != heads * hd {
            return Err(AttentionError::DimMismatch {
                what: "fragment shape",
                expected: heads * hd,
                got: f.partial_out.len(),
            });
        }
    }
    let mut partial_out = Vec::with_capacity(heads * hd);
    let mut lse = Vec::with_capacity(heads);
    let mut parts = Vec::with_capacity(fragments.len());
    for h in 0..heads {
        parts.clear();
        parts.extend(fragments.iter().map(|f| (f.lse[h], f.head(h))));
        let (o, l) = merge_head(&mut parts)?;
        partial_out.extend(o);
        lse.push(l);
    }
    Ok(AttentionFragment {
        head_dim: hd,
        partial_out,
        lse,
    })
}

/// Collects fragments from any number of sources and reduces them all at
/// once in canonical order. Merging accumulators in any grouping gives a
/// bitwise identical result.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FragmentAccumulator {
    leaves: Vec<AttentionFragment>,
}

impl FragmentAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, f: AttentionFragment) {
        self.leaves.push(f);
    }

    pub fn absorb(&mut self, other: FragmentAccumulator) {
        self.leaves.extend(other.leaves);
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn finish(&self) -> Result<AttentionFragment, AttentionError> {
        merge_fragments(&self.leaves)
    }
}

/// `max |a - b| / max |b|`, with `b` as the reference.
pub fn max_rel_error(got: &[f64], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let diff = got
        .iter()
        .zip(reference)
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    if got.len() != reference.len() {
        return f64::INFINITY;
    }
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
