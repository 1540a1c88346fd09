//! Configuration enumeration, throughput-vs-interactivity Pareto frontiers,
//! batch scalability and frontier comparison.

use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_config, HardwareSpec, ModelSpec, ParallelismConfig, Strategy, WorkloadSpec};
use crate::num::{exp, ln};
use crate::sim::{decode_ttl, memory_footprint, SimError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchError {
    #[error("search space field `{0}` must not be empty")]
    EmptySpace(&'static str),
    #[error("batch sizes must be at least 1")]
    ZeroBatch,
    #[error("cannot build a frontier from zero points")]
    NoPoints,
    #[error("TTL budget must be positive")]
    NonPositiveBudget,
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub strategies: Vec<Strategy>,
    pub gpu_counts: Vec<u32>,
    pub batch_sizes: Vec<u32>,
    pub hopb: bool,
}

impl SearchSpace {
    /// Batch sizes 1, 2, 4, ..., 1024.
    pub fn default_batches() -> Vec<u32> {
        (0..=10).map(|p| 1u32 << p).collect()
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if self.strategies.is_empty() {
            return Err(SearchError::EmptySpace("strategies"));
        }
        if self.gpu_counts.is_empty() {
            return Err(SearchError::EmptySpace("gpu_counts"));
        }
        if self.batch_sizes.is_empty() {
            return Err(SearchError::EmptySpace("batch_sizes"));
        }
        if self.batch_sizes.contains(&0) {
            return Err(SearchError::ZeroBatch);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub config: ParallelismConfig,
    pub batch: u32,
    pub ttl: f64,
    /// Interactivity, `1 / ttl`.
    pub tokens_per_sec_per_user: f64,
    /// Throughput, `batch / (ttl * gpus)`.
    pub tokens_per_sec_per_gpu: f64,
}

impl ParetoPoint {
    pub fn new(config: ParallelismConfig, batch: u32, ttl: f64) -> Self {
        Self {
            config,
            batch,
            ttl,
            tokens_per_sec_per_user: 1.0 / ttl,
            tokens_per_sec_per_gpu: f64::from(batch) / (ttl * f64::from(config.gpus())),
        }
    }

    /// `self` is at least as good in both metrics and strictly better in one.
    pub fn dominates(&self, other: &ParetoPoint) -> bool {
        let (u, g) = (self.tokens_per_sec_per_user, self.tokens_per_sec_per_gpu);
        let (ou, og) = (other.tokens_per_sec_per_user, other.tokens_per_sec_per_gpu);
        u >= ou && g >= og && (u > ou || g > og)
    }

    /// Preference among points with identical metrics: fewer GPUs, then the
    /// smallest width tuple, then strategy and batch.
    fn tie_key(&self) -> (u32, (u32, u32, u32, u32, u32), Strategy, u32) {
        (self.config.gpus(), self.config.widths(), self.config.strategy, self.batch)
    }
}

/// Non-dominated points, sorted by interactivity descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frontier {
    pub points: Vec<ParetoPoint>,
}

impl Frontier {
    pub fn best_interactivity(&self) -> f64 {
        self.points.first().map_or(0.0, |p| p.tokens_per_sec_per_user)
    }

    pub fn best_throughput(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.tokens_per_sec_per_gpu)
    }

    pub fn contains(&self, p: &ParetoPoint) -> bool {
        self.points.iter().any(|q| q == p)
    }
}

fn divisors(n: u32) -> impl Iterator<Item = u32> {
    (1..=n).filter(move |d| n % d == 0)
}

/// Every width tuple of every listed GPU count that passes validation,
/// ordered by strategy, GPU count, then width tuple.
pub fn enumerate(space: &SearchSpace, model: &ModelSpec, hw: &HardwareSpec) -> Vec<ParallelismConfig> {
    let mut gpus: Vec<u32> = space.gpu_counts.iter().copied().filter(|n| *n > 0).collect();
    gpus.sort_unstable();
    gpus.dedup();
    let mut strategies = space.strategies.clone();
    strategies.sort_unstable();
    strategies.dedup();

    let mut out = Vec::new();
    for &strategy in &strategies {
        for &n in &gpus {
            let mut batch: Vec<ParallelismConfig> = Vec::new();
            match strategy {
                Strategy::Helix => {
                    for tpa in divisors(n) {
                        for tpf in divisors(n) {
                            batch.push(ParallelismConfig::helix(tpa, n / tpa, tpf, n / tpf));
                        }
                    }
                }
                Strategy::Tp => batch.push(ParallelismConfig::tp(n)),
                Strategy::TpPp => {
                    for pp in divisors(n).filter(|p| *p >= 2) {
                        batch.push(ParallelismConfig::tp_pp(n / pp, pp));
                    }
                }
                Strategy::MedhaKvp => {
                    for tp in divisors(n) {
                        batch.push(ParallelismConfig::medha(tp, n / tp));
                    }
                }
                Strategy::EpDpAttention => {
                    for tpf in divisors(n) {
                        batch.push(ParallelismConfig::ep_dp(tpf, n / tpf));
                    }
                }
            }
            batch.retain(|c| validate_config(c, model, hw).is_valid());
            batch.sort_by_key(|c| c.widths());
            out.extend(batch);
        }
    }
    out
}

/// What happened to one `(config, batch)` pair.
#[derive(Debug, Clone, PartialEq)]
pub enum PointOutcome {
    Point(ParetoPoint),
    /// Weights plus KV shard exceed per-GPU DRAM.
    Infeasible,
    Failed(SimError),
}

pub fn evaluate_point(
    config: &ParallelismConfig,
    batch: u32,
    model: &ModelSpec,
    work: &WorkloadSpec,
    hw: &HardwareSpec,
    hopb: bool,
) -> PointOutcome {
    let w = work.with_batch(batch);
    if !memory_footprint(config, model, &w, hw).fits(hw) {
        return PointOutcome::Infeasible;
    }
    match decode_ttl(config, model, &w, hw, hopb) {
        Ok(b) => PointOutcome::Point(ParetoPoint::new(*config, batch, b.ttl)),
        Err(e) => PointOutcome::Failed(e),
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Evaluation {
    pub points: Vec<ParetoPoint>,
    pub infeasible: usize,
    pub failures: Vec<(ParallelismConfig, u32, SimError)>,
}

impl Evaluation {
    /// Collects outcomes in the given order.
    pub fn collect<I>(outcomes: I) -> Self
    where
        I: IntoIterator<Item = (ParallelismConfig, u32, PointOutcome)>,
    {
        let mut ev = Evaluation::default();
        for (config, batch, outcome) in outcomes {
            match outcome {
                PointOutcome::Point(p) => ev.points.push(p),
                PointOutcome::Infeasible => ev.infeasible += 1,
                PointOutcome::Failed(e) => ev.failures.push((config, batch, e)),
            }
        }
        ev
    }

    pub fn attempted(&self) -> usize {
        self.points.len() + self.infeasible + self.failures.len()
    }
}

/// `(config, batch)` pairs in evaluation order.
pub fn work_items(space: &SearchSpace, model: &ModelSpec, hw: &HardwareSpec) -> Vec<(ParallelismConfig, u32)> {
    let configs = enumerate(space, model, hw);
    let mut items = Vec::with_capacity(configs.len() * space.batch_sizes.len());
    for c in configs {
        for &b in &space.batch_sizes {
            items.push((c, b));
        }
    }
    items
}

/// Scores every configuration at every batch size. Per-point failures are
/// recorded and do not stop the sweep.
pub fn evaluate(
    space: &SearchSpace,
    model: &ModelSpec,
    work: &WorkloadSpec,
    hw: &HardwareSpec,
) -> Result<Evaluation, SearchError> {
    space.validate()?;
    let items = work_items(space, model, hw);
    Ok(Evaluation::collect(items.into_iter().map(|(c, b)| {
        let o = evaluate_point(&c, b, model, work, hw, space.hopb);
        (c, b, o)
    })))
}

fn frontier_order(a: &ParetoPoint, b: &ParetoPoint) -> Ordering {
    b.tokens_per_sec_per_user
        .total_cmp(&a.tokens_per_sec_per_user)
        .then(b.tokens_per_sec_per_gpu.total_cmp(&a.tokens_per_sec_per_gpu))
        .then(a.tie_key().cmp(&b.tie_key()))
}

/// Maximal non-dominated subset under (interactivity, throughput). Among
/// points with identical metrics only the preferred one is kept.
pub fn pareto_frontier(points: &[ParetoPoint]) -> Result<Frontier, SearchError> {
    if points.is_empty() {
        return Err(SearchError::NoPoints);
    }
    let mut sorted: Vec<ParetoPoint> = points.to_vec();
    sorted.sort_by(frontier_order);
    let mut out: Vec<ParetoPoint> = Vec::new();
    let mut best_gpu = f64::NEG_INFINITY;
    for p in sorted {
        if p.tokens_per_sec_per_gpu > best_gpu {
            best_gpu = p.tokens_per_sec_per_gpu;
            out.push(p);
        }
    }
    Ok(Frontier { points: out })
}

/// Largest batch whose TTL fits the budget and whose KV shard fits in DRAM;
/// 0 when a single request already misses.
pub fn batch_scalability(
    config: &ParallelismConfig,
    model: &ModelSpec,
    work: &WorkloadSpec,
    hw: &HardwareSpec,
    ttl_budget: f64,
    hopb: bool,
) -> Result<u32, SearchError> {
    if !(ttl_budget > 0.0) {
        return Err(SearchError::NonPositiveBudget);
    }
    const CAP: u32 = 1 << 24;
    let fits = |b: u32| -> Result<bool, SearchError> {
        let w = work.with_batch(b);
        if !memory_footprint(config, model, &w, hw).fits(hw) {
            return Ok(false);
        }
        Ok(decode_ttl(config, model, &w, hw, hopb)?.ttl <= ttl_budget)
    };
    if !fits(1)? {
        return Ok(0);
    }
    let mut lo = 1u32;
    let mut hi = 2u32;
    while hi <= CAP && fits(hi)? {
        lo = hi;
        hi *= 2;
    }
    if hi > CAP {
        return Ok(lo);
    }
    // fits(lo) holds and fits(hi) does not.
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if fits(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPoint {
    pub interactivity: f64,
    pub throughput: f64,
}

/// How `candidate` compares with `baseline`. All normalized values are
/// relative to the baseline's best interactivity and best throughput.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Best candidate interactivity over best baseline interactivity.
    pub interactivity_ratio: f64,
    /// Largest candidate/baseline throughput ratio at matched
    /// interactivity. `None` when no candidate point falls inside the
    /// interactivity the baseline can reach.
    pub throughput_ratio: Option<f64>,
    /// Interactivity at which `throughput_ratio` was attained.
    pub throughput_ratio_at: Option<f64>,
    /// Candidate reaches interactivity outside the baseline's range.
    pub partial_overlap: bool,
    pub baseline_best_interactivity: f64,
    pub baseline_best_throughput: f64,
    pub candidate: Vec<NormalizedPoint>,
    pub baseline: Vec<NormalizedPoint>,
}

/// Baseline throughput attainable at interactivity of at least `u`,
/// interpolated piecewise-linearly in log-log space between frontier
/// points. `pts` is sorted by interactivity ascending.
fn envelope_at(pts: &[(f64, f64)], u: f64) -> Option<f64> {
    let (first, last) = (pts.first()?, pts.last()?);
    if u > last.0 {
        return None;
    }
    if u <= first.0 {
        return Some(first.1);
    }
    for w in pts.windows(2) {
        let ((u0, g0), (u1, g1)) = (w[0], w[1]);
        if u == u0 {
            return Some(g0);
        }
        if u == u1 {
            return Some(g1);
        }
        if u > u0 && u < u1 {
            let t = (ln(u) - ln(u0)) / (ln(u1) - ln(u0));
            return Some(exp(ln(g0) + t * (ln(g1) - ln(g0))));
        }
    }
    Some(last.1)
}

pub fn compare(candidate: &Frontier, baseline: &Frontier) -> Result<Comparison, SearchError> {
    if candidate.points.is_empty() || baseline.points.is_empty() {
        return Err(SearchError::NoPoints);
    }
    let mut base: Vec<(f64, f64)> = baseline
        .points
        .iter()
        .map(|p| (p.tokens_per_sec_per_user, p.tokens_per_sec_per_gpu))
        .collect();
    base.sort_by(|a, b| a.0.total_cmp(&b.0));
    let base_u_max = baseline.best_interactivity();
    let base_u_min = base.first().map_or(0.0, |p| p.0);
    let base_g_max = base.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);

    let mut best: Option<(f64, f64)> = None;
    let mut partial = false;
    for p in &candidate.points {
        let u = p.tokens_per_sec_per_user;
        if u > base_u_max || u < base_u_min {
            partial = true;
        }
        if let Some(g) = envelope_at(&base, u) {
            let r = p.tokens_per_sec_per_gpu / g;
            if best.map_or(true, |(br, _)| r > br) {
                best = Some((r, u));
            }
        }
    }

    let norm = |f: &Frontier| -> Vec<NormalizedPoint> {
        f.points
            .iter()
            .map(|p| NormalizedPoint {
                interactivity: p.tokens_per_sec_per_user / base_u_max,
                throughput: p.tokens_per_sec_per_gpu / base_g_max,
            })
            .collect()
    };

    Ok(Comparison {
        interactivity_ratio: candidate.best_interactivity() / base_u_max,
        throughput_ratio: best.map(|b| b.0),
        throughput_ratio_at: best.map(|b| b.1),
        partial_overlap: partial,
        baseline_best_interactivity: base_u_max,
        baseline_best_throughput: base_g_max,
        candidate: norm(candidate),
        baseline: norm(baseline),
    })
}

/// Largest relative interactivity drop of `degraded` against `reference`
/// at matched throughput. `None` when no reference point falls inside the
/// throughput range `degraded` reaches.
pub fn interactivity_loss(reference: &Frontier, degraded: &Frontier) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> = degraded
        .points
        .iter()
        .map(|p| (p.tokens_per_sec_per_gpu, p.tokens_per_sec_per_user))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    reference
        .points
        .iter()
        .filter_map(|p| {
            envelope_at(&pts, p.tokens_per_sec_per_gpu).map(|u| 1.0 - u / p.tokens_per_sec_per_user)
        })
        .reduce(f64::max)
}
