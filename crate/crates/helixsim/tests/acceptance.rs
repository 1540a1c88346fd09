//! One check per acceptance criterion. Each prints a single PASS/FAIL line
//! with the measured numbers; the test fails if any criterion fails.

use std::time::Instant;

use helix_core::attention::fuzz::{self, TOLERANCE};
use helix_core::attention::{
    reference_decode, simulate_decode_step, AttnDims, DecodeWeights, KvToken, ShardedKVCache,
};
use helix_core::model::{HardwareSpec, ModelSpec, ParallelismConfig, Strategy, WorkloadSpec};
use helix_core::roofline::{kv_read_time, weight_read_time};
use helix_core::search::{evaluate, interactivity_loss, pareto_frontier, Frontier, ParetoPoint, SearchSpace};
use helix_core::sim::{a2a_payload_bytes, hopb_schedule, hopb_span};
use helixsim::config::load_model;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(a.abs())
    }
}

fn dense_roofline_model() -> ModelSpec {
    load_model("dense-roofline").unwrap().0
}

// 1: hand-computed integer parameter counts, scaled at the end.
fn roofline_exactness() -> Outcome {
    let model = dense_roofline_model();
    let hw = HardwareSpec::default();
    let work = WorkloadSpec::new(8, 1_000_000);
    let kv = kv_read_time(&model, &work, 8, 1, &hw).unwrap();
    let kv_ref = 8.0 * 2.0 * 1.0 * 128.0 * 1e6 * 0.5 / 8e12;
    // 2*H*(Q/8)*Hsz + 2*H*1*Hsz + 3*H*F/8 with H = 16384
    let params: u64 = 2 * 16384 * 16 * 128 + 2 * 16384 * 128 + 3 * 16384 * 65536 / 8;
    let w = weight_read_time(&model, 8, 8, &hw).unwrap();
    let w_ref = params as f64 * 0.5 / 8e12;
    let (e_kv, e_w) = (rel(kv, kv_ref), rel(w, w_ref));
    let pass = e_kv <= 1e-12 && e_w <= 1e-12 && rel(kv, 1.28e-4) <= 1e-12 && rel(w, 2.9622272e-5) <= 1e-12;
    outcome(pass, format!("kv={kv:e} (err {e_kv:e}), weights={w:e} (err {e_w:e})"))
}

// 2
fn plateau_and_linearity() -> Outcome {
    let hw = HardwareSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0;
    let draws = 1000;
    for _ in 0..draws {
        let head = 16 * rng.random_range(1..=16);
        let q = 8 * rng.random_range(1..=16);
        let model = ModelSpec {
            hidden_dim: q * head,
            query_heads: q,
            kv_heads: 8,
            head_size: head,
            kv_latent_dim: None,
            ..dense_roofline_model()
        };
        let b = rng.random_range(1..=256);
        let s = rng.random_range(1..=10_000_000u64);
        let work = WorkloadSpec::new(b, s);
        let base = kv_read_time(&model, &work, 8, 1, &hw).unwrap();
        for tpa in [16, 32, 64] {
            if kv_read_time(&model, &work, tpa, 1, &hw).unwrap() != base {
                violations += 1;
            }
        }
        let k = rng.random_range(2..=64u32);
        let more_seq = kv_read_time(&model, &WorkloadSpec::new(b, s * u64::from(k)), 8, 1, &hw).unwrap();
        let more_batch = match b.checked_mul(k) {
            Some(bk) => kv_read_time(&model, &WorkloadSpec::new(bk, s), 8, 1, &hw).unwrap(),
            None => f64::from(k) * base,
        };
        let kvp = rng.random_range(1..=64);
        let split = kv_read_time(&model, &work, 8, kvp, &hw).unwrap();
        if rel(more_seq, f64::from(k) * base) > 1e-12
            || rel(more_batch, f64::from(k) * base) > 1e-12
            || rel(split * f64::from(kvp), base) > 1e-12
        {
            violations += 1;
        }
        let doubled = kv_read_time(&model, &WorkloadSpec::new(b, 2 * s), 8, 1, &hw).unwrap();
        if doubled != 2.0 * base {
            violations += 1;
        }
    }
    outcome(violations == 0, format!("{draws} draws, {violations} violations"))
}

// 3
fn overlap_schedule() -> Outcome {
    let off = hopb_schedule(8, 2.0, 1.2, false).total;
    let on = hopb_schedule(8, 2.0, 1.2, true);
    let last = on.events.last().unwrap().comm_end;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0_f64;
    for _ in 0..10_000 {
        let r = rng.random_range(1..=64);
        let c = rng.random_range(0.0..10.0);
        let t = rng.random_range(0.0..10.0);
        for enabled in [true, false] {
            let events = hopb_schedule(r, c, t, enabled).events;
            let end = events.last().unwrap().comm_end;
            worst = worst.max(rel(end, hopb_span(r, c, t, enabled)));
        }
    }
    let pass = off == 25.6 && on.total == 17.2 && last == 17.2 && (on.total - 17.0).abs() / 17.0 < 0.02 && worst <= 1e-12;
    outcome(
        pass,
        format!("disabled {off}, enabled {} (events {last}), closed form vs events max rel {worst:e}", on.total),
    )
}

// 4
fn exact_attention() -> Outcome {
    let start = Instant::now();
    let r = fuzz::run(4, 1000).unwrap();
    outcome(
        r.passed(TOLERANCE),
        format!(
            "1000 trials, max rel {:e}, split {:e}, nested {:e}, decode {:e}, permutation mismatches {}, regroup mismatches {} ({:.1?})",
            r.max_rel_error,
            r.max_split_error,
            r.max_nested_error,
            r.max_decode_error,
            r.permutation_mismatches,
            r.regroup_mismatches,
            start.elapsed()
        ),
    )
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn weights(rng: &mut ChaCha8Rng, dims: &AttnDims) -> DecodeWeights {
    let h = dims.hidden();
    let kvw = dims.kv_heads * dims.head_dim;
    DecodeWeights {
        wq: rand_vec(rng, h * h, 0.3),
        wk: rand_vec(rng, h * kvw, 0.3),
        wv: rand_vec(rng, h * kvw, 0.3),
    }
}

/// Transcript shape of one decode step over a cache of `seq` tokens laid
/// out as near-even contiguous blocks.
fn transcript_shape(seq: usize, kvp: usize, tpa: usize, dims: &AttnDims) -> Vec<(usize, usize, usize, usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seq as u64);
    let hd = dims.head_dim;
    let keys: Vec<Vec<f64>> = (0..dims.kv_heads).map(|_| rand_vec(&mut rng, seq * hd, 1.0)).collect();
    let values: Vec<Vec<f64>> = (0..dims.kv_heads).map(|_| rand_vec(&mut rng, seq * hd, 1.0)).collect();
    let split: Vec<usize> = (0..kvp).map(|r| seq / kvp + usize::from(r < seq % kvp)).collect();
    let mut caches = vec![ShardedKVCache::from_split(&keys, &values, hd, &split).unwrap()];
    let w = weights(&mut rng, dims);
    let x = vec![rand_vec(&mut rng, dims.hidden(), 1.0)];
    simulate_decode_step(&mut caches, &x, &w, dims, tpa).unwrap().transcript.shape()
}

// 5
fn communication_invariance() -> Outcome {
    let hw = HardwareSpec::default();
    let mut mismatches = Vec::new();
    for preset in ["llama405b-like", "deepseek-r1-like"] {
        let model = load_model(preset).unwrap().0;
        for (kvp, tpa) in [(2, 1), (8, 1), (8, 8), (32, 1)] {
            let payload = a2a_payload_bytes(&model, 16, kvp, tpa, &hw).unwrap();
            let cfg = ParallelismConfig::helix(tpa, kvp, tpa * kvp, 1);
            let a = helix_core::sim::attention_phase(&cfg, &model, &WorkloadSpec::new(16, 100_000), &hw);
            let b = helix_core::sim::attention_phase(&cfg, &model, &WorkloadSpec::new(16, 1_000_000), &hw);
            let same_comm = match (a, b) {
                (Ok(a), Ok(b)) => {
                    let expected = helix_core::sim::comm_time(
                        helix_core::sim::CollectiveKind::AllToAll,
                        kvp,
                        payload.buffer_bytes(),
                        &hw,
                    );
                    a.a2a_comm == b.a2a_comm && a.a2a_comm == expected && a.kv_read != b.kv_read
                }
                (Err(_), Err(_)) => true,
                _ => false,
            };
            if !same_comm {
                mismatches.push(format!("{preset} kvp={kvp} tpa={tpa}"));
            }
        }
    }
    let dims = AttnDims {
        query_heads: 4,
        kv_heads: 2,
        head_dim: 4,
    };
    let start = Instant::now();
    let t_short = transcript_shape(100_000, 4, 2, &dims);
    let t_long = transcript_shape(1_000_000, 4, 2, &dims);
    if t_short != t_long {
        mismatches.push("decode transcript".into());
    }
    outcome(
        mismatches.is_empty(),
        format!(
            "payloads and {} transcript messages equal at S=1e5 and S=1e6 ({:.1?}){}",
            t_long.len(),
            start.elapsed(),
            if mismatches.is_empty() { String::new() } else { format!("; mismatches: {mismatches:?}") }
        ),
    )
}

// 6
fn round_robin_balance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let dims = AttnDims {
        query_heads: 4,
        kv_heads: 2,
        head_dim: 4,
    };
    let kvw = dims.kv_heads * dims.head_dim;
    let w = weights(&mut rng, &dims);
    let mut worst_spread = 0;
    let mut worst_err = 0.0_f64;
    let mut decodes = 0;
    for kvp in [2, 4, 8] {
        let mut cache = ShardedKVCache::new(kvp, dims.kv_heads, dims.head_dim, 16).unwrap();
        for n in 1..=10_000 {
            let token = KvToken {
                keys: rand_vec(&mut rng, kvw, 2.0),
                values: rand_vec(&mut rng, kvw, 1.0),
            };
            cache.append(&token).unwrap();
            let t = cache.shard_tokens();
            worst_spread = worst_spread.max(t.iter().max().unwrap() - t.iter().min().unwrap());
            if n % 997 == 0 || n == 10_000 {
                let before = cache.clone();
                let x = vec![rand_vec(&mut rng, dims.hidden(), 1.0)];
                let mut batch = vec![cache.clone()];
                let step = simulate_decode_step(&mut batch, &x, &w, &dims, 2).unwrap();
                let r = reference_decode(&before, &step.queries[0], &dims).unwrap();
                worst_err = worst_err.max(helix_core::attention::max_rel_error(&step.outputs[0], &r));
                decodes += 1;
            }
        }
    }
    outcome(
        worst_spread <= 16 && worst_err <= TOLERANCE,
        format!("max shard spread {worst_spread}, {decodes} decodes, max rel error {worst_err:e}"),
    )
}

// 7
fn frontier_vs_brute_force() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..=80);
        let points: Vec<ParetoPoint> = (0..n)
            .map(|_| {
                let gpus = [1, 2, 4, 8][rng.random_range(0..4)];
                // coarse grid so duplicate metric pairs occur
                let ttl = f64::from(rng.random_range(1..=20u32)) * 1e-3;
                ParetoPoint::new(ParallelismConfig::tp(gpus), rng.random_range(1..=8), ttl)
            })
            .collect();
        let metric = |p: &ParetoPoint| (p.tokens_per_sec_per_user.to_bits(), p.tokens_per_sec_per_gpu.to_bits());
        let mut brute: Vec<_> = points
            .iter()
            .filter(|p| !points.iter().any(|q| q.dominates(p)))
            .map(metric)
            .collect();
        brute.sort_unstable();
        brute.dedup();
        let mut fast: Vec<_> = pareto_frontier(&points).unwrap().points.iter().map(metric).collect();
        let before = fast.len();
        fast.sort_unstable();
        fast.dedup();
        if fast != brute || before != fast.len() {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("200 sets, {mismatches} mismatches"))
}

fn frontier(model: &ModelSpec, strategies: Vec<Strategy>, hopb: bool) -> (Frontier, Vec<ParetoPoint>) {
    let space = SearchSpace {
        strategies,
        gpu_counts: (1..=64).collect(),
        batch_sizes: SearchSpace::default_batches(),
        hopb,
    };
    let eval = evaluate(&space, model, &WorkloadSpec::new(1, 1_000_000), &HardwareSpec::default()).unwrap();
    (pareto_frontier(&eval.points).unwrap(), eval.points)
}

/// Every baseline frontier point is matched or beaten in both metrics by
/// some candidate point, and the candidate is strictly ahead somewhere in
/// each metric.
fn weakly_dominates(candidate: &Frontier, baseline: &Frontier) -> bool {
    let covered = baseline.points.iter().all(|b| {
        candidate
            .points
            .iter()
            .any(|c| c.tokens_per_sec_per_user >= b.tokens_per_sec_per_user && c.tokens_per_sec_per_gpu >= b.tokens_per_sec_per_gpu)
    });
    covered
        && candidate.best_interactivity() > baseline.best_interactivity()
        && candidate.best_throughput() > baseline.best_throughput()
}

// 8
fn directional_claims() -> Outcome {
    let start = Instant::now();
    let baseline = vec![Strategy::Tp, Strategy::TpPp, Strategy::MedhaKvp, Strategy::EpDpAttention];
    let mut details = Vec::new();
    let mut dominance = true;
    let mut never_improves = true;
    let mut losses = Vec::new();
    for preset in ["llama405b-like", "deepseek-r1-like"] {
        let model = load_model(preset).unwrap().0;
        let (helix, on_points) = frontier(&model, vec![Strategy::Helix], true);
        let (base, _) = frontier(&model, baseline.clone(), true);
        let dom = weakly_dominates(&helix, &base);
        dominance &= dom;
        let (helix_off, off_points) = frontier(&model, vec![Strategy::Helix], false);
        let improved = on_points.iter().zip(&off_points).filter(|(a, b)| b.ttl < a.ttl).count();
        never_improves &= improved == 0;
        let loss = interactivity_loss(&helix, &helix_off).unwrap_or(0.0);
        losses.push(loss);
        details.push(format!(
            "{preset}: interactivity {:.1} vs {:.1}, throughput {:.3} vs {:.3}, dominates {dom}; overlap-off loss {:.1}%, improved {improved}",
            helix.best_interactivity(),
            base.best_interactivity(),
            helix.best_throughput(),
            base.best_throughput(),
            loss * 100.0
        ));
    }
    let ordering = losses[0] > losses[1];
    outcome(
        dominance && never_improves && ordering,
        format!(
            "(a) dominance {dominance}; (b) never improves {never_improves}, llama loss > deepseek loss {ordering}; {} ({:.1?})",
            details.join("; "),
            start.elapsed()
        ),
    )
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 roofline exactness", roofline_exactness),
        ("2 plateau and linearity", plateau_and_linearity),
        ("3 overlap schedule", overlap_schedule),
        ("4 exact attention", exact_attention),
        ("5 communication volume invariance", communication_invariance),
        ("6 round-robin balance", round_robin_balance),
        ("7 pareto frontier", frontier_vs_brute_force),
        ("8 directional claims", directional_claims),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let o = check();
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
