//! Subcommand implementations. Each returns a short human summary; data
//! goes to files in the output directory.

use std::fmt::Write as _;
use std::path::PathBuf;

use helix_core::attention::fuzz::{self, FuzzReport};
use helix_core::roofline::{sweep, SweepAxis};
use helix_core::search::{
    batch_scalability, compare, enumerate, interactivity_loss, pareto_frontier, Comparison, Evaluation,
};
use helix_core::sim::{
    a2a_payload_bytes, attention_timeline, decode_ttl, memory_footprint, A2aPayload, MemoryFootprint,
};
use helix_core::{
    model::validate_config, Frontier, HardwareSpec, LatencyBreakdown, ModelSpec, ParallelismConfig, ParetoPoint,
    SearchSpace, Strategy, WorkloadSpec,
};
use serde::Serialize;

use crate::cli::{Axis, Cli, Command, CommonArgs, ParetoArgs, RooflineArgs, SimulateArgs, VerifyArgs};
use crate::config::{
    check_workload, load_hardware, load_model, load_parallelism, load_workload, parse_values, to_u32, Source,
};
use crate::manifest::RunManifest;
use crate::output::{json_bytes, Csv, OutputSet};
use crate::parallel::{build_pool, evaluate_parallel, thread_cap};
use crate::{CliError, Result};

pub const DEFAULT_SEQ_LEN: u64 = 1_000_000;

pub const POINT_HEADER: [&str; 11] = [
    "strategy",
    "tpa",
    "kvp",
    "tpf",
    "ep",
    "pp",
    "batch",
    "ttl_s",
    "tok_s_user",
    "tok_s_gpu",
    "on_frontier",
];

pub fn run(cli: Cli, argv: Vec<String>) -> Result<String> {
    thread_cap()?;
    match cli.command {
        Command::Roofline(a) => roofline(&a, argv),
        Command::Simulate(a) => simulate(&a, argv),
        Command::Pareto(a) => pareto(&a, argv),
        Command::VerifyAttention(a) => verify_attention(&a, argv),
    }
}

fn threads() -> usize {
    thread_cap().ok().flatten().unwrap_or_else(rayon::current_num_threads)
}

struct Inputs {
    model: ModelSpec,
    hw: HardwareSpec,
    sources: Vec<(&'static str, Source)>,
}

fn load_inputs(common: &CommonArgs, default_model: &str) -> Result<Inputs> {
    let (model, msrc) = load_model(common.model.as_deref().unwrap_or(default_model))?;
    let (hw, hsrc) = load_hardware(&common.hardware)?;
    Ok(Inputs {
        model,
        hw,
        sources: vec![("model", msrc), ("hardware", hsrc)],
    })
}

fn manifest(argv: Vec<String>, seed: Option<u64>, sources: &[(&str, Source)]) -> RunManifest {
    let mut m = RunManifest::new(argv, seed, threads());
    for (kind, src) in sources {
        m.add_input(kind, src);
    }
    m
}

fn files_line(paths: &[PathBuf]) -> String {
    let names: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
    format!("wrote {}", names.join(", "))
}

fn num(x: f64) -> String {
    format!("{x}")
}

// ---------------------------------------------------------------- roofline

fn default_range(axis: Axis) -> &'static str {
    match axis {
        Axis::Tpa => "1..64",
        Axis::Kvp => "1,2,4,8,16,32,64",
        Axis::SeqLen => "100000,200000,500000,1000000,2000000,5000000,10000000",
    }
}

pub fn roofline(args: &RooflineArgs, argv: Vec<String>) -> Result<String> {
    let inputs = load_inputs(&args.common, "dense-roofline")?;
    let work = WorkloadSpec::new(
        args.common.batch.unwrap_or(8),
        args.common.seq_len.unwrap_or(DEFAULT_SEQ_LEN),
    );
    check_workload(&work)?;
    let axis = match args.axis {
        Axis::Tpa => SweepAxis::Tpa,
        Axis::Kvp => SweepAxis::Kvp,
        Axis::SeqLen => SweepAxis::SeqLen,
    };
    let values = parse_values(args.range.as_deref().unwrap_or(default_range(args.axis)))?;
    let rows = sweep(&inputs.model, &work, &inputs.hw, axis, &values)
        .map_err(|e| CliError::Invalid(format!("roofline sweep: {e}")))?;

    let mut csv = Csv::new(&["axis", "value", "kv_read_time_s", "weight_read_time_s"]);
    for r in &rows {
        csv.row(&[
            r.axis.as_str().to_string(),
            r.value.to_string(),
            num(r.kv_read_time),
            r.weight_read_time.map(num).unwrap_or_default(),
        ]);
    }
    let mut out = OutputSet::new();
    out.add("roofline.csv", csv.into_bytes());
    let paths = out.commit(
        &args.common.out,
        "roofline",
        manifest(argv, args.common.seed, &inputs.sources),
    )?;
    Ok(format!("{} rows over {}\n{}", rows.len(), axis.as_str(), files_line(&paths)))
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Serialize)]
pub struct SimulationReport {
    pub model: String,
    pub hardware: String,
    pub config: ParallelismConfig,
    pub gpus: u32,
    pub workload: WorkloadSpec,
    pub hopb: bool,
    pub breakdown: LatencyBreakdown,
    pub tokens_per_sec_per_user: f64,
    pub tokens_per_sec_per_gpu: f64,
    pub memory: MemoryFootprint,
    pub fits_in_dram: bool,
    pub a2a_payload: Option<A2aPayload>,
}

pub fn simulate(args: &SimulateArgs, argv: Vec<String>) -> Result<String> {
    let mut inputs = load_inputs(&args.common, "llama405b-like")?;
    let config = match &args.config {
        Some(path) => {
            let (c, src) = load_parallelism(path)?;
            inputs.sources.push(("config", src));
            c
        }
        None => {
            let strategy = Strategy::parse(&args.strategy).ok_or_else(|| {
                CliError::Input(format!(
                    "strategy `{}` is not one of helix, tp, tp_pp, ep_dp_attention, medha_kvp",
                    args.strategy
                ))
            })?;
            ParallelismConfig {
                strategy,
                tpa: args.tpa,
                kvp: args.kvp,
                tpf: args.tpf,
                ep: args.ep,
                pp: args.pp,
            }
        }
    };
    let mut work = match &args.workload {
        Some(path) => {
            let (w, src) = load_workload(path)?;
            inputs.sources.push(("workload", src));
            w
        }
        None => WorkloadSpec::new(1, DEFAULT_SEQ_LEN),
    };
    if let Some(b) = args.common.batch {
        work.batch = b;
    }
    if let Some(s) = args.common.seq_len {
        work.kv_seq_len = s;
    }
    check_workload(&work)?;
    let (model, hw) = (&inputs.model, &inputs.hw);
    if let Some(v) = validate_config(&config, model, hw).violation() {
        return Err(CliError::Invalid(format!(
            "config {}: violates rule \"{}\": {v}",
            describe(&config),
            v.rule()
        )));
    }
    let hopb = args.common.hopb.enabled();
    let breakdown = decode_ttl(&config, model, &work, hw, hopb)
        .map_err(|e| CliError::Invalid(format!("simulation: {e}")))?;
    let memory = memory_footprint(&config, model, &work, hw);
    let a2a_payload = if config.kvp > 1 {
        a2a_payload_bytes(model, work.batch, config.kvp, config.tpa, hw).ok()
    } else {
        None
    };
    let point = ParetoPoint::new(config, work.batch, breakdown.ttl);
    let report = SimulationReport {
        model: model.name.clone(),
        hardware: hw.name.clone(),
        config,
        gpus: config.gpus(),
        workload: work.clone(),
        hopb,
        breakdown: breakdown.clone(),
        tokens_per_sec_per_user: point.tokens_per_sec_per_user,
        tokens_per_sec_per_gpu: point.tokens_per_sec_per_gpu,
        fits_in_dram: memory.fits(hw),
        memory,
        a2a_payload,
    };

    let mut out = OutputSet::new();
    out.add("simulate.json", json_bytes(&report)?);
    if args.timeline {
        let tl = attention_timeline(&config, model, &work, hw, hopb)
            .map_err(|e| CliError::Invalid(format!("timeline: {e}")))?;
        let mut csv = Csv::new(&["request", "compute_start_s", "compute_end_s", "comm_start_s", "comm_end_s"]);
        for e in &tl.events {
            csv.row(&[
                e.request.to_string(),
                num(e.compute_start),
                num(e.compute_end),
                num(e.comm_start),
                num(e.comm_end),
            ]);
        }
        out.add("timeline.csv", csv.into_bytes());
    }
    let paths = out.commit(
        &args.common.out,
        "simulate",
        manifest(argv, args.common.seed, &inputs.sources),
    )?;

    let mut s = String::new();
    let _ = writeln!(s, "{} on {} GPUs, B={}, S={}", describe(&config), config.gpus(), work.batch, work.kv_seq_len);
    let _ = writeln!(
        s,
        "ttl {:.6e} s  ({:.2} tok/s/user, {:.3} tok/s/gpu){}",
        breakdown.ttl,
        point.tokens_per_sec_per_user,
        point.tokens_per_sec_per_gpu,
        if report.fits_in_dram { "" } else { "  [exceeds DRAM]" }
    );
    s.push_str(&files_line(&paths));
    Ok(s)
}

fn describe(c: &ParallelismConfig) -> String {
    format!(
        "{}(tpa={},kvp={},tpf={},ep={},pp={})",
        c.strategy, c.tpa, c.kvp, c.tpf, c.ep, c.pp
    )
}

// ---------------------------------------------------------------- pareto

#[derive(Debug, Clone, Serialize)]
pub struct SetSummary {
    pub strategies: Vec<Strategy>,
    pub configs: usize,
    pub points: usize,
    pub infeasible: usize,
    pub failures: Vec<String>,
    pub frontier: Vec<ParetoPoint>,
    pub best_interactivity: f64,
    pub best_throughput: f64,
    /// Largest sustainable batch within `--ttl-budget` over frontier layouts.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_batch_within_budget: Option<u32>,
}

#[derive(Debug, Serialize)]
pub struct ParetoReport {
    pub model: String,
    pub hardware: String,
    pub kv_seq_len: u64,
    pub hopb: bool,
    pub gpu_counts: Vec<u32>,
    pub batch_sizes: Vec<u32>,
    pub ttl_budget: Option<f64>,
    pub helix: Option<SetSummary>,
    pub baseline: Option<SetSummary>,
    /// Helix against the best baseline.
    pub comparison: Option<Comparison>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_ratio: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct AblationReport {
    pub model: String,
    pub hardware: String,
    pub kv_seq_len: u64,
    pub gpu_counts: Vec<u32>,
    pub batch_sizes: Vec<u32>,
    pub hopb_on: SetSummary,
    pub hopb_off: SetSummary,
    /// Largest relative drop in tok/s/user at matched tok/s/gpu.
    pub interactivity_loss: Option<f64>,
    /// Evaluated points whose TTL got strictly better with overlap off.
    pub points_improved_by_disabling: usize,
    pub comparison: Option<Comparison>,
}

struct Sweep {
    model: ModelSpec,
    hw: HardwareSpec,
    work: WorkloadSpec,
    gpus: Vec<u32>,
    batches: Vec<u32>,
    strategies: Vec<Strategy>,
    sources: Vec<(&'static str, Source)>,
}

fn parse_strategies(raw: Option<&str>) -> Result<Vec<Strategy>> {
    let Some(raw) = raw else {
        return Ok(Strategy::ALL.to_vec());
    };
    let mut out = Vec::new();
    for part in raw.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let s = Strategy::parse(part).ok_or_else(|| CliError::Input(format!("unknown strategy `{part}`")))?;
        if !out.contains(&s) {
            out.push(s);
        }
    }
    if out.is_empty() {
        return Err(CliError::Input("--strategies lists no strategy".into()));
    }
    Ok(out)
}

fn prepare(args: &ParetoArgs) -> Result<Sweep> {
    let inputs = load_inputs(&args.common, "llama405b-like")?;
    let gpus = to_u32(&parse_values(&args.gpus)?, "gpu count")?;
    if gpus.contains(&0) {
        return Err(CliError::Invalid("--gpus: GPU counts must be at least 1".into()));
    }
    let gpus: Vec<u32> = gpus.into_iter().filter(|g| *g <= inputs.hw.max_gpus).collect();
    if gpus.is_empty() {
        return Err(CliError::Invalid(format!(
            "--gpus: no count within hardware max_gpus = {}",
            inputs.hw.max_gpus
        )));
    }
    let batches = match (&args.batches, args.common.batch) {
        (Some(raw), _) => to_u32(&parse_values(raw)?, "batch")?,
        (None, Some(b)) => vec![b],
        (None, None) => SearchSpace::default_batches(),
    };
    if batches.contains(&0) {
        return Err(CliError::Invalid("batch sizes must be at least 1".into()));
    }
    let work = WorkloadSpec::new(1, args.common.seq_len.unwrap_or(DEFAULT_SEQ_LEN));
    check_workload(&work)?;
    if let Some(b) = args.ttl_budget {
        if !(b > 0.0 && b.is_finite()) {
            return Err(CliError::Invalid(format!("--ttl-budget must be positive (got {b})")));
        }
    }
    Ok(Sweep {
        model: inputs.model,
        hw: inputs.hw,
        work,
        gpus,
        batches,
        strategies: parse_strategies(args.strategies.as_deref())?,
        sources: inputs.sources,
    })
}

struct Evaluated {
    summary: SetSummary,
    eval: Evaluation,
    frontier: Option<Frontier>,
}

fn evaluate_set(
    pool: &rayon::ThreadPool,
    sw: &Sweep,
    strategies: Vec<Strategy>,
    hopb: bool,
    budget: Option<f64>,
) -> Result<Evaluated> {
    let space = SearchSpace {
        strategies: strategies.clone(),
        gpu_counts: sw.gpus.clone(),
        batch_sizes: sw.batches.clone(),
        hopb,
    };
    let configs = enumerate(&space, &sw.model, &sw.hw).len();
    let eval = evaluate_parallel(pool, &space, &sw.model, &sw.work, &sw.hw)
        .map_err(|e| CliError::Invalid(format!("search: {e}")))?;
    let frontier = pareto_frontier(&eval.points).ok();
    let max_batch = match (budget, &frontier) {
        (Some(b), Some(f)) => {
            let mut layouts: Vec<ParallelismConfig> = f.points.iter().map(|p| p.config).collect();
            layouts.sort_by_key(|c| (c.strategy, c.widths()));
            layouts.dedup();
            let mut best = 0;
            for c in layouts {
                let n = batch_scalability(&c, &sw.model, &sw.work, &sw.hw, b, hopb)
                    .map_err(|e| CliError::Invalid(format!("batch scalability: {e}")))?;
                best = best.max(n);
            }
            Some(best)
        }
        _ => None,
    };
    let fpoints = frontier.as_ref().map(|f| f.points.clone()).unwrap_or_default();
    let summary = SetSummary {
        strategies,
        configs,
        points: eval.points.len(),
        infeasible: eval.infeasible,
        failures: eval
            .failures
            .iter()
            .map(|(c, b, e)| format!("{} batch {b}: {e}", describe(c)))
            .collect(),
        best_interactivity: frontier.as_ref().map_or(0.0, Frontier::best_interactivity),
        best_throughput: frontier.as_ref().map_or(0.0, Frontier::best_throughput),
        frontier: fpoints,
        max_batch_within_budget: max_batch,
    };
    Ok(Evaluated {
        summary,
        eval,
        frontier,
    })
}

fn points_csv(sets: &[&Evaluated]) -> Vec<u8> {
    let mut csv = Csv::new(&POINT_HEADER);
    for set in sets {
        for p in &set.eval.points {
            let on = set.frontier.as_ref().is_some_and(|f| f.contains(p));
            let c = p.config;
            csv.row(&[
                c.strategy.as_str().to_string(),
                c.tpa.to_string(),
                c.kvp.to_string(),
                c.tpf.to_string(),
                c.ep.to_string(),
                c.pp.to_string(),
                p.batch.to_string(),
                num(p.ttl),
                num(p.tokens_per_sec_per_user),
                num(p.tokens_per_sec_per_gpu),
                on.to_string(),
            ]);
        }
    }
    csv.into_bytes()
}

pub fn pareto(args: &ParetoArgs, argv: Vec<String>) -> Result<String> {
    let sw = prepare(args)?;
    let pool = build_pool()?;
    if args.ablate_hopb {
        return ablate(args, argv, &sw, &pool);
    }
    let hopb = args.common.hopb.enabled();
    let helix_set: Vec<Strategy> = sw.strategies.iter().copied().filter(|s| *s == Strategy::Helix).collect();
    let base_set: Vec<Strategy> = sw.strategies.iter().copied().filter(|s| *s != Strategy::Helix).collect();
    let helix = if helix_set.is_empty() {
        None
    } else {
        Some(evaluate_set(&pool, &sw, helix_set, hopb, args.ttl_budget)?)
    };
    let base = if base_set.is_empty() {
        None
    } else {
        Some(evaluate_set(&pool, &sw, base_set, hopb, args.ttl_budget)?)
    };
    let comparison = match (&helix, &base) {
        (Some(h), Some(b)) => match (&h.frontier, &b.frontier) {
            (Some(hf), Some(bf)) => compare(hf, bf).ok(),
            _ => None,
        },
        _ => None,
    };
    let batch_ratio = match (&helix, &base) {
        (Some(h), Some(b)) => match (h.summary.max_batch_within_budget, b.summary.max_batch_within_budget) {
            (Some(x), Some(y)) if y > 0 => Some(f64::from(x) / f64::from(y)),
            _ => None,
        },
        _ => None,
    };

    let sets: Vec<&Evaluated> = helix.iter().chain(base.iter()).collect();
    let csv = points_csv(&sets);
    let report = ParetoReport {
        model: sw.model.name.clone(),
        hardware: sw.hw.name.clone(),
        kv_seq_len: sw.work.kv_seq_len,
        hopb,
        gpu_counts: sw.gpus.clone(),
        batch_sizes: sw.batches.clone(),
        ttl_budget: args.ttl_budget,
        helix: helix.as_ref().map(|h| h.summary.clone()),
        baseline: base.as_ref().map(|b| b.summary.clone()),
        comparison: comparison.clone(),
        batch_ratio,
    };
    let mut out = OutputSet::new();
    out.add("pareto.csv", csv);
    out.add("comparison.json", json_bytes(&report)?);
    let paths = out.commit(
        &args.common.out,
        "pareto",
        manifest(argv, args.common.seed, &sw.sources),
    )?;

    let mut s = String::new();
    for (label, set) in [("helix", &helix), ("baseline", &base)] {
        if let Some(e) = set {
            let _ = writeln!(
                s,
                "{label}: {} configs, {} points, {} infeasible, {} failed, frontier {}",
                e.summary.configs,
                e.summary.points,
                e.summary.infeasible,
                e.summary.failures.len(),
                e.summary.frontier.len()
            );
        }
    }
    if let Some(c) = &comparison {
        let _ = writeln!(
            s,
            "interactivity ratio {:.4}, throughput ratio {}{}",
            c.interactivity_ratio,
            c.throughput_ratio.map_or("n/a".into(), |r| format!("{r:.4}")),
            if c.partial_overlap { " (partial overlap)" } else { "" }
        );
    }
    s.push_str(&files_line(&paths));
    Ok(s)
}

fn ablate(args: &ParetoArgs, argv: Vec<String>, sw: &Sweep, pool: &rayon::ThreadPool) -> Result<String> {
    // The ablation concerns the overlap scheme, so it defaults to Helix only.
    let strategies = if args.strategies.is_some() {
        sw.strategies.clone()
    } else {
        vec![Strategy::Helix]
    };
    let on = evaluate_set(pool, sw, strategies.clone(), true, args.ttl_budget)?;
    let off = evaluate_set(pool, sw, strategies, false, args.ttl_budget)?;
    let improved = on
        .eval
        .points
        .iter()
        .zip(&off.eval.points)
        .filter(|(a, b)| b.ttl < a.ttl)
        .count();
    let (loss, comparison) = match (&on.frontier, &off.frontier) {
        (Some(a), Some(b)) => (interactivity_loss(a, b), compare(b, a).ok()),
        _ => (None, None),
    };
    let report = AblationReport {
        model: sw.model.name.clone(),
        hardware: sw.hw.name.clone(),
        kv_seq_len: sw.work.kv_seq_len,
        gpu_counts: sw.gpus.clone(),
        batch_sizes: sw.batches.clone(),
        hopb_on: on.summary.clone(),
        hopb_off: off.summary.clone(),
        interactivity_loss: loss,
        points_improved_by_disabling: improved,
        comparison,
    };
    let mut out = OutputSet::new();
    out.add("pareto_hopb_on.csv", points_csv(&[&on]));
    out.add("pareto_hopb_off.csv", points_csv(&[&off]));
    out.add("ablation.json", json_bytes(&report)?);
    let paths = out.commit(
        &args.common.out,
        "pareto-ablation",
        manifest(argv, args.common.seed, &sw.sources),
    )?;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "overlap on: frontier {} (best {:.3} tok/s/user); off: frontier {} (best {:.3})",
        on.summary.frontier.len(),
        on.summary.best_interactivity,
        off.summary.frontier.len(),
        off.summary.best_interactivity
    );
    let _ = writeln!(
        s,
        "max tok/s/user loss at matched tok/s/gpu: {}; points improved by disabling: {improved}",
        loss.map_or("n/a".into(), |l| format!("{:.2}%", l * 100.0))
    );
    s.push_str(&files_line(&paths));
    Ok(s)
}

// ---------------------------------------------------------------- verify

pub fn format_fuzz_report(r: &FuzzReport, tolerance: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "seed {}", r.seed);
    let _ = writeln!(s, "trials {}", r.trials);
    let _ = writeln!(s, "tolerance {tolerance:e}");
    let _ = writeln!(s, "max_rel_error {:e}", r.max_rel_error);
    let _ = writeln!(s, "max_split_error {:e}", r.max_split_error);
    let _ = writeln!(s, "max_nested_error {:e}", r.max_nested_error);
    let _ = writeln!(s, "max_decode_error {:e}", r.max_decode_error);
    let _ = writeln!(s, "permutation_mismatches {}", r.permutation_mismatches);
    let _ = writeln!(s, "regroup_mismatches {}", r.regroup_mismatches);
    let _ = writeln!(s, "message_count_mismatches {}", r.message_count_mismatches);
    let _ = writeln!(s, "balance_violations {}", r.balance_violations);
    let _ = writeln!(s, "messages {}", r.messages);
    let _ = writeln!(s, "message_elements {}", r.message_elements);
    let _ = writeln!(s, "max_elements_per_destination {}", r.max_elements_per_destination);
    let _ = writeln!(s, "result {}", if r.passed(tolerance) { "PASS" } else { "FAIL" });
    s
}

pub fn verify_attention(args: &VerifyArgs, argv: Vec<String>) -> Result<String> {
    if args.trials == 0 {
        return Err(CliError::Invalid("trials must be ≥ 1".into()));
    }
    let report = fuzz::run(args.seed, args.trials)
        .map_err(|e| CliError::Other(anyhow::anyhow!("attention harness: {e}")))?;
    let text = format_fuzz_report(&report, fuzz::TOLERANCE);
    if let Some(dir) = &args.out {
        let mut out = OutputSet::new();
        out.add("verify-attention.txt", text.clone().into_bytes());
        out.commit(dir, "verify-attention", RunManifest::new(argv, Some(args.seed), 1))?;
    }
    if !report.passed(fuzz::TOLERANCE) {
        return Err(CliError::Tolerance(format!("{text}tolerance violated")));
    }
    Ok(text.trim_end().to_string())
}
