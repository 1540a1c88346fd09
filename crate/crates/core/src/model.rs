//! Domain descriptors shared by the simulator, the search and the numerics
//! harness, together with the rules that decide whether a parallelism
//! configuration is admissible for a given model and machine.
//!
//! All types are plain immutable values once built.

use alloc::string::String;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::div_ceil;

/// Attention flavour. MLA shares a single latent KV representation across
/// every query head, so it behaves like one KV head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    Gqa,
    Mla,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoeSpec {
    pub total_experts: u32,
    pub active_experts_per_token: u32,
    pub expert_ffn_dim: u32,
    /// Zero when the model has no shared expert.
    #[serde(default)]
    pub shared_expert_ffn_dim: u32,
}

fn default_gate_factor() -> u32 {
    3
}

/// Purely dimensional model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub name: String,
    pub layers: u32,
    pub hidden_dim: u32,
    pub query_heads: u32,
    pub kv_heads: u32,
    pub head_size: u32,
    pub ffn_dim: u32,
    pub attention: AttentionKind,
    #[serde(default)]
    pub moe: Option<MoeSpec>,
    /// Weight matrices per FFN block (3 for SwiGLU).
    #[serde(default = "default_gate_factor")]
    pub ffn_gate_factor: u32,
    /// Width of the MLA latent KV vector. Defaults to `head_size`; ignored
    /// for GQA.
    #[serde(default)]
    pub kv_latent_dim: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("model field `{0}` must be strictly positive")]
    ZeroField(&'static str),
    #[error("hidden_dim ({hidden}) must equal query_heads ({query_heads}) x head_size ({head_size})")]
    HiddenMismatch {
        hidden: u32,
        query_heads: u32,
        head_size: u32,
    },
    #[error("query_heads ({query_heads}) must be a multiple of kv_heads ({kv_heads})")]
    KvHeadsNotDivisor { query_heads: u32, kv_heads: u32 },
    #[error("moe.active_experts_per_token ({active}) exceeds moe.total_experts ({total})")]
    ActiveExceedsTotal { active: u32, total: u32 },
}

impl ModelSpec {
    /// KV heads as seen by the memory system: 1 for MLA.
    pub fn effective_kv_heads(&self) -> u32 {
        match self.attention {
            AttentionKind::Gqa => self.kv_heads,
            AttentionKind::Mla => 1,
        }
    }

    /// Width of one stored K (or V) head.
    pub fn kv_head_dim(&self) -> u32 {
        match self.attention {
            AttentionKind::Gqa => self.head_size,
            AttentionKind::Mla => self.kv_latent_dim.unwrap_or(self.head_size),
        }
    }

    pub fn is_moe(&self) -> bool {
        self.moe.is_some()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("layers", self.layers),
            ("hidden_dim", self.hidden_dim),
            ("query_heads", self.query_heads),
            ("head_size", self.head_size),
            ("ffn_dim", self.ffn_dim),
            ("ffn_gate_factor", self.ffn_gate_factor),
        ];
        for (field, v) in dims {
            if v == 0 {
                return Err(ModelError::ZeroField(field));
            }
        }
        if self.kv_latent_dim == Some(0) {
            return Err(ModelError::ZeroField("kv_latent_dim"));
        }
        if u64::from(self.hidden_dim) != u64::from(self.query_heads) * u64::from(self.head_size) {
            return Err(ModelError::HiddenMismatch {
                hidden: self.hidden_dim,
                query_heads: self.query_heads,
                head_size: self.head_size,
            });
        }
        if self.attention == AttentionKind::Gqa {
            if self.kv_heads == 0 {
                return Err(ModelError::ZeroField("kv_heads"));
            }
            if self.query_heads % self.kv_heads != 0 {
                return Err(ModelError::KvHeadsNotDivisor {
                    query_heads: self.query_heads,
                    kv_heads: self.kv_heads,
                });
            }
        }
        if let Some(moe) = &self.moe {
            for (field, v) in [
                ("moe.total_experts", moe.total_experts),
                ("moe.active_experts_per_token", moe.active_experts_per_token),
                ("moe.expert_ffn_dim", moe.expert_ffn_dim),
            ] {
                if v == 0 {
                    return Err(ModelError::ZeroField(field));
                }
            }
            if moe.active_experts_per_token > moe.total_experts {
                return Err(ModelError::ActiveExceedsTotal {
                    active: moe.active_experts_per_token,
                    total: moe.total_experts,
                });
            }
        }
        Ok(())
    }
}

/// Per-GPU machine description. Bandwidths are bytes/s, latency is seconds
/// per message, compute is FLOP/s at model precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardwareSpec {
    pub name: String,
    pub mem_bw: f64,
    pub compute_throughput: f64,
    pub link_bw: f64,
    pub link_latency: f64,
    pub max_gpus: u32,
    /// Fractional values are allowed (0.5 for 4-bit storage).
    pub bytes_per_param: f64,
    /// Per-GPU DRAM capacity in bytes used for feasibility checks.
    pub dram_capacity: f64,
}

impl Default for HardwareSpec {
    fn default() -> Self {
        Self {
            name: String::from("gb200-nvl72"),
            mem_bw: 8e12,
            compute_throughput: 5e15,
            link_bw: 9e11,
            link_latency: 2e-6,
            max_gpus: 64,
            bytes_per_param: 0.5,
            dram_capacity: 192e9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HardwareError {
    #[error("hardware field `{field}` must be positive and finite (got {value})")]
    NonPositive { field: &'static str, value: f64 },
    #[error("hardware field `max_gpus` must be at least 1")]
    NoGpus,
}

impl HardwareSpec {
    pub fn validate(&self) -> Result<(), HardwareError> {
        let fields = [
            ("mem_bw", self.mem_bw),
            ("compute_throughput", self.compute_throughput),
            ("link_bw", self.link_bw),
            ("bytes_per_param", self.bytes_per_param),
            ("dram_capacity", self.dram_capacity),
        ];
        for (field, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(HardwareError::NonPositive { field, value });
            }
        }
        // Zero latency is a useful idealisation; only negative is rejected.
        if !(self.link_latency.is_finite() && self.link_latency >= 0.0) {
            return Err(HardwareError::NonPositive {
                field: "link_latency",
                value: self.link_latency,
            });
        }
        if self.max_gpus == 0 {
            return Err(HardwareError::NoGpus);
        }
        Ok(())
    }
}

fn default_decode_steps() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub batch: u32,
    pub kv_seq_len: u64,
    #[serde(default = "default_decode_steps")]
    pub decode_steps: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkloadError {
    #[error("workload field `batch` must be at least 1")]
    ZeroBatch,
    #[error("workload field `kv_seq_len` must be at least 1")]
    ZeroSeqLen,
}

impl WorkloadSpec {
    pub fn new(batch: u32, kv_seq_len: u64) -> Self {
        Self {
            batch,
            kv_seq_len,
            decode_steps: 1,
        }
    }

    pub fn with_batch(&self, batch: u32) -> Self {
        Self {
            batch,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.batch == 0 {
            return Err(WorkloadError::ZeroBatch);
        }
        if self.kv_seq_len == 0 {
            return Err(WorkloadError::ZeroSeqLen);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// KVP x TPA attention, TPF x EP FFN on the same GPU pool.
    Helix,
    /// Tensor parallelism tied across attention and FFN.
    Tp,
    /// Tied tensor parallelism with pipeline stages.
    TpPp,
    /// Data-parallel attention with expert-parallel FFN.
    EpDpAttention,
    /// Vanilla KV parallelism with tied TP widths and no overlap.
    MedhaKvp,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Helix,
        Strategy::Tp,
        Strategy::TpPp,
        Strategy::EpDpAttention,
        Strategy::MedhaKvp,
    ];

    pub const BASELINES: [Strategy; 4] = [
        Strategy::Tp,
        Strategy::TpPp,
        Strategy::EpDpAttention,
        Strategy::MedhaKvp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Helix => "helix",
            Strategy::Tp => "tp",
            Strategy::TpPp => "tp_pp",
            Strategy::EpDpAttention => "ep_dp_attention",
            Strategy::MedhaKvp => "medha_kvp",
        }
    }

    pub fn parse(raw: &str) -> Option<Self> {
        let compact: String = raw
            .trim()
            .chars()
            .filter(|c| *c != '_' && *c != '-')
            .flat_map(char::to_lowercase)
            .collect();
        match compact.as_str() {
            "helix" => Some(Strategy::Helix),
            "tp" => Some(Strategy::Tp),
            "tppp" => Some(Strategy::TpPp),
            "epdpattention" | "ep" | "epdp" => Some(Strategy::EpDpAttention),
            "medhakvp" | "medha" | "kvp" => Some(Strategy::MedhaKvp),
            _ => None,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParallelismConfig {
    pub strategy: Strategy,
    pub tpa: u32,
    pub kvp: u32,
    pub tpf: u32,
    pub ep: u32,
    pub pp: u32,
}

impl ParallelismConfig {
    pub fn helix(tpa: u32, kvp: u32, tpf: u32, ep: u32) -> Self {
        Self {
            strategy: Strategy::Helix,
            tpa,
            kvp,
            tpf,
            ep,
            pp: 1,
        }
    }

    pub fn tp(width: u32) -> Self {
        Self {
            strategy: Strategy::Tp,
            tpa: width,
            kvp: 1,
            tpf: width,
            ep: 1,
            pp: 1,
        }
    }

    pub fn tp_pp(width: u32, pp: u32) -> Self {
        Self {
            strategy: Strategy::TpPp,
            pp,
            ..Self::tp(width)
        }
    }

    pub fn medha(tp: u32, kvp: u32) -> Self {
        Self {
            strategy: Strategy::MedhaKvp,
            tpa: tp,
            kvp,
            tpf: tp,
            ep: kvp,
            pp: 1,
        }
    }

    pub fn ep_dp(tpf: u32, ep: u32) -> Self {
        Self {
            strategy: Strategy::EpDpAttention,
            tpa: 1,
            kvp: 1,
            tpf,
            ep,
            pp: 1,
        }
    }

    /// Total GPUs used. Data-parallel attention spreads requests over the
    /// whole FFN grid, so its count comes from the FFN side.
    pub fn gpus(&self) -> u32 {
        match self.strategy {
            Strategy::EpDpAttention => self.tpf * self.ep * self.pp,
            _ => self.kvp * self.tpa * self.pp,
        }
    }

    /// GPUs in one pipeline stage.
    pub fn stage_gpus(&self) -> u32 {
        self.gpus() / self.pp.max(1)
    }

    /// Width tuple used for deterministic tie-breaking.
    pub fn widths(&self) -> (u32, u32, u32, u32, u32) {
        (self.tpa, self.kvp, self.tpf, self.ep, self.pp)
    }
}

/// A broken configuration rule. Invalidity is a value, not an error.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("all widths must be at least 1 (`{0}` is 0)")]
    ZeroWidth(&'static str),
    #[error("attention uses {attention} GPUs per stage but the FFN uses {ffn}")]
    GpuMismatch { attention: u32, ffn: u32 },
    #[error("config needs {gpus} GPUs, hardware allows {max}")]
    ExceedsMaxGpus { gpus: u32, max: u32 },
    #[error("TPA <= K violated: tpa={tpa} exceeds {kv_heads} effective KV heads")]
    TpaExceedsKvHeads { tpa: u32, kv_heads: u32 },
    #[error("{strategy} requires {field}={expected} (got {actual})")]
    FixedWidth {
        strategy: Strategy,
        field: &'static str,
        expected: u32,
        actual: u32,
    },
    #[error("{0} ties attention and FFN tensor widths (tpa must equal tpf)")]
    UntiedWidths(Strategy),
    #[error("tp_pp requires at least two pipeline stages")]
    MissingPipeline,
    #[error("tpa={tpa} does not divide query_heads={query_heads}")]
    TpaNotDivisor { tpa: u32, query_heads: u32 },
    #[error("kvp x tpa = {group} does not divide hidden_dim={hidden}")]
    HiddenNotDivisible { group: u32, hidden: u32 },
    #[error("ep={ep} > 1 requires an MoE model")]
    DenseWithExperts { ep: u32 },
    #[error("ep={ep} does not divide total_experts={experts}")]
    ExpertsNotDivisible { ep: u32, experts: u32 },
}

impl Violation {
    /// Short rule identifier.
    pub fn rule(&self) -> &'static str {
        match self {
            Violation::ZeroWidth(_) => "widths >= 1",
            Violation::GpuMismatch { .. } => "KVP x TPA = TPF x EP",
            Violation::ExceedsMaxGpus { .. } => "N <= max_gpus",
            Violation::TpaExceedsKvHeads { .. } => "TPA ≤ K",
            Violation::FixedWidth { .. } => "strategy width",
            Violation::UntiedWidths(_) => "TPA = TPF",
            Violation::MissingPipeline => "PP >= 2",
            Violation::TpaNotDivisor { .. } => "TPA | Q",
            Violation::HiddenNotDivisible { .. } => "KVP x TPA | H",
            Violation::DenseWithExperts { .. } => "dense => EP = 1",
            Violation::ExpertsNotDivisible { .. } => "EP | experts",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Valid,
    Invalid(Violation),
}

impl Verdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, Verdict::Valid)
    }

    pub fn violation(&self) -> Option<&Violation> {
        match self {
            Verdict::Valid => None,
            Verdict::Invalid(v) => Some(v),
        }
    }

    pub fn into_result(self) -> Result<(), Violation> {
        match self {
            Verdict::Valid => Ok(()),
            Verdict::Invalid(v) => Err(v),
        }
    }
}

fn require(
    strategy: Strategy,
    field: &'static str,
    expected: u32,
    actual: u32,
) -> Result<(), Violation> {
    if expected == actual {
        Ok(())
    } else {
        Err(Violation::FixedWidth {
            strategy,
            field,
            expected,
            actual,
        })
    }
}

/// Checks every structural rule for `config` on this model and machine.
pub fn validate_config(config: &ParallelismConfig, model: &ModelSpec, hw: &HardwareSpec) -> Verdict {
    match check_config(config, model, hw) {
        Ok(()) => Verdict::Valid,
        Err(v) => Verdict::Invalid(v),
    }
}

fn check_config(c: &ParallelismConfig, model: &ModelSpec, hw: &HardwareSpec) -> Result<(), Violation> {
    for (field, v) in [
        ("tpa", c.tpa),
        ("kvp", c.kvp),
        ("tpf", c.tpf),
        ("ep", c.ep),
        ("pp", c.pp),
    ] {
        if v == 0 {
            return Err(Violation::ZeroWidth(field));
        }
    }

    let s = c.strategy;
    match s {
        Strategy::Helix => {
            require(s, "pp", 1, c.pp)?;
            let k = model.effective_kv_heads();
            if c.tpa > k {
                return Err(Violation::TpaExceedsKvHeads {
                    tpa: c.tpa,
                    kv_heads: k,
                });
            }
        }
        Strategy::Tp | Strategy::TpPp => {
            require(s, "kvp", 1, c.kvp)?;
            require(s, "ep", 1, c.ep)?;
            if c.tpa != c.tpf {
                return Err(Violation::UntiedWidths(s));
            }
            if s == Strategy::Tp {
                require(s, "pp", 1, c.pp)?;
            } else if c.pp < 2 {
                return Err(Violation::MissingPipeline);
            }
        }
        Strategy::MedhaKvp => {
            require(s, "pp", 1, c.pp)?;
            if c.tpa != c.tpf {
                return Err(Violation::UntiedWidths(s));
            }
        }
        Strategy::EpDpAttention => {
            require(s, "tpa", 1, c.tpa)?;
            require(s, "kvp", 1, c.kvp)?;
            require(s, "pp", 1, c.pp)?;
        }
    }

    if s != Strategy::EpDpAttention {
        let attention = c.kvp * c.tpa;
        let ffn = c.tpf * c.ep;
        if attention != ffn {
            return Err(Violation::GpuMismatch { attention, ffn });
        }
    }

    let gpus = c.gpus();
    if gpus > hw.max_gpus {
        return Err(Violation::ExceedsMaxGpus {
            gpus,
            max: hw.max_gpus,
        });
    }

    if model.query_heads % c.tpa != 0 {
        return Err(Violation::TpaNotDivisor {
            tpa: c.tpa,
            query_heads: model.query_heads,
        });
    }
    if matches!(s, Strategy::Helix | Strategy::MedhaKvp) {
        let group = c.kvp * c.tpa;
        if model.hidden_dim % group != 0 {
            return Err(Violation::HiddenNotDivisible {
                group,
                hidden: model.hidden_dim,
            });
        }
    }

    match &model.moe {
        // Medha on a dense model keeps FFN on its TP group; the remaining
        // KVP groups are FFN replicas, so ep = kvp is structural there.
        None if c.ep > 1 && s != Strategy::MedhaKvp => {
            return Err(Violation::DenseWithExperts { ep: c.ep });
        }
        Some(moe) if moe.total_experts % c.ep != 0 => {
            return Err(Violation::ExpertsNotDivisible {
                ep: c.ep,
                experts: moe.total_experts,
            });
        }
        _ => {}
    }
    Ok(())
}

/// `ceil(K / tpa)`: KV heads each attention rank must hold.
pub(crate) fn kv_heads_per_rank(model: &ModelSpec, tpa: u32) -> u32 {
    div_ceil(model.effective_kv_heads(), tpa)
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn helix_within_kv_heads_is_valid() {
        let hw = HardwareSpec::default();
        let v = validate_config(&ParallelismConfig::helix(8, 4, 32, 1), &roofline_dense(), &hw);
        assert_eq!(v, Verdict::Valid);
    }

    #[test]
    fn helix_tpa_above_kv_heads_is_rejected() {
        let hw = HardwareSpec::default();
        let v = validate_config(&ParallelismConfig::helix(16, 2, 32, 1), &roofline_dense(), &hw);
        assert_eq!(v.violation().unwrap().rule(), "TPA ≤ K");
    }

    #[test]
    fn mla_forces_single_kv_head() {
        let hw = HardwareSpec::default();
        let model = mla_moe();
        assert_eq!(model.effective_kv_heads(), 1);
        let v = validate_config(&ParallelismConfig::helix(2, 2, 4, 1), &model, &hw);
        assert_eq!(v.violation().unwrap().rule(), "TPA ≤ K");
        let ok = validate_config(&ParallelismConfig::helix(1, 4, 1, 4), &model, &hw);
        assert!(ok.is_valid());
    }

    #[test]
    fn gpu_budget_is_enforced() {
        let hw = HardwareSpec {
            max_gpus: 16,
            ..HardwareSpec::default()
        };
        let v = validate_config(&ParallelismConfig::helix(8, 4, 32, 1), &roofline_dense(), &hw);
        assert!(matches!(v, Verdict::Invalid(Violation::ExceedsMaxGpus { gpus: 32, max: 16 })));
    }

    #[test]
    fn widths_must_multiply_out() {
        let hw = HardwareSpec::default();
        let v = validate_config(&ParallelismConfig::helix(8, 4, 16, 1), &roofline_dense(), &hw);
        assert!(matches!(v, Verdict::Invalid(Violation::GpuMismatch { .. })));
    }

    #[test]
    fn baselines_have_fixed_shapes() {
        let hw = HardwareSpec::default();
        let dense = roofline_dense();
        assert!(validate_config(&ParallelismConfig::tp(16), &dense, &hw).is_valid());
        let mut bad = ParallelismConfig::tp(8);
        bad.kvp = 2;
        bad.tpf = 16;
        assert!(!validate_config(&bad, &dense, &hw).is_valid());
        assert_eq!(
            validate_config(&ParallelismConfig::tp_pp(8, 1), &dense, &hw),
            Verdict::Invalid(Violation::MissingPipeline)
        );
        assert!(validate_config(&ParallelismConfig::tp_pp(8, 4), &dense, &hw).is_valid());
        assert!(validate_config(&ParallelismConfig::medha(16, 4), &dense, &hw).is_valid());
        assert!(validate_config(&ParallelismConfig::ep_dp(8, 1), &dense, &hw).is_valid());
        assert!(!validate_config(&ParallelismConfig::ep_dp(4, 2), &dense, &hw).is_valid());
        assert!(validate_config(&ParallelismConfig::ep_dp(4, 2), &gqa_moe(), &hw).is_valid());
    }

    #[test]
    fn tpa_must_divide_query_heads() {
        let hw = HardwareSpec::default();
        let v = validate_config(&ParallelismConfig::tp(3), &roofline_dense(), &hw);
        assert_eq!(v.violation().unwrap().rule(), "TPA | Q");
    }

    #[test]
    fn model_validation_names_the_field() {
        let mut m = roofline_dense();
        m.hidden_dim = 1000;
        assert!(matches!(m.validate(), Err(ModelError::HiddenMismatch { .. })));
        let mut m = roofline_dense();
        m.kv_heads = 3;
        assert!(matches!(m.validate(), Err(ModelError::KvHeadsNotDivisor { .. })));
        let mut m = roofline_dense();
        m.ffn_dim = 0;
        assert_eq!(m.validate(), Err(ModelError::ZeroField("ffn_dim")));
        let mut m = mla_moe();
        m.moe.as_mut().unwrap().active_experts_per_token = 100;
        assert!(matches!(m.validate(), Err(ModelError::ActiveExceedsTotal { .. })));
    }

    #[test]
    fn strategy_parse_accepts_aliases() {
        for s in Strategy::ALL {
            assert_eq!(Strategy::parse(s.as_str()), Some(s));
        }
        assert_eq!(Strategy::parse("TP-PP"), Some(Strategy::TpPp));
        assert_eq!(Strategy::parse("nope"), None);
    }
}
