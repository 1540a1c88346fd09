use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "helixsim", version, about = "Decode-latency simulator and sharding search for long-context inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-layer DRAM read times swept over one axis.
    Roofline(RooflineArgs),
    /// Latency breakdown of one parallel layout.
    Simulate(SimulateArgs),
    /// Sweep layouts and batch sizes and extract Pareto frontiers.
    Pareto(ParetoArgs),
    /// Fuzz the sharded-attention merge against a monolithic reference.
    VerifyAttention(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

impl Toggle {
    pub fn enabled(self) -> bool {
        self == Toggle::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Tpa,
    Kvp,
    #[value(alias = "seq_len", alias = "s")]
    SeqLen,
}

/// Whole number that may be written as `1e6`.
pub fn parse_count(raw: &str) -> Result<u64, String> {
    if let Ok(v) = raw.parse::<u64>() {
        return Ok(v);
    }
    match raw.parse::<f64>() {
        Ok(f) if f >= 0.0 && f.fract() == 0.0 && f <= u64::MAX as f64 => Ok(f as u64),
        _ => Err(format!("`{raw}` is not a whole number")),
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Preset name or JSON file.
    #[arg(long)]
    pub model: Option<String>,
    /// Preset name or JSON file.
    #[arg(long, default_value = "gb200-nvl72")]
    pub hardware: String,
    /// KV sequence length in tokens.
    #[arg(long, value_parser = parse_count)]
    pub seq_len: Option<u64>,
    #[arg(long)]
    pub batch: Option<u32>,
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    pub hopb: Toggle,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Recorded in the manifest.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct RooflineArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, default_value_t = Axis::Tpa)]
    pub axis: Axis,
    /// `a..b` (inclusive), `v1,v2,...` or one value. Defaults per axis.
    #[arg(long)]
    pub range: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// JSON parallelism config; overrides the width flags.
    #[arg(long)]
    pub config: Option<String>,
    /// JSON workload; `--batch` and `--seq-len` override its fields.
    #[arg(long)]
    pub workload: Option<String>,
    #[arg(long, default_value = "helix")]
    pub strategy: String,
    #[arg(long, default_value_t = 1)]
    pub tpa: u32,
    #[arg(long, default_value_t = 1)]
    pub kvp: u32,
    #[arg(long, default_value_t = 1)]
    pub tpf: u32,
    #[arg(long, default_value_t = 1)]
    pub ep: u32,
    #[arg(long, default_value_t = 1)]
    pub pp: u32,
    /// Also write the attention overlap timeline as CSV.
    #[arg(long)]
    pub timeline: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ParetoArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// GPU counts, e.g. `1..64`; counts without a valid layout are skipped.
    #[arg(long, default_value = "1..64")]
    pub gpus: String,
    /// Batch sizes; defaults to powers of two up to 1024.
    #[arg(long)]
    pub batches: Option<String>,
    /// Comma-separated strategies; defaults to all.
    #[arg(long)]
    pub strategies: Option<String>,
    /// Evaluate with overlap on and off and compare the two frontiers.
    #[arg(long)]
    pub ablate_hopb: bool,
    /// Also report the largest batch each frontier layout sustains within
    /// this TTL (seconds).
    #[arg(long)]
    pub ttl_budget: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Directory for the text report and manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exponent_counts() {
        assert_eq!(parse_count("1e6"), Ok(1_000_000));
        assert_eq!(parse_count("42"), Ok(42));
        assert!(parse_count("1.5").is_err());
        assert!(parse_count("-3").is_err());
    }
}
