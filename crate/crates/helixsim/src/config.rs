//! Loading models, hardware, workloads and parallelism configs from preset
//! names or JSON files.

use std::path::Path;

use helix_core::{HardwareSpec, ModelSpec, ParallelismConfig, WorkloadSpec};
use serde::de::DeserializeOwned;

use crate::{presets, CliError, Result};

/// Raw input bytes and where they came from, kept for manifest digests.
#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub label: String,
    pub bytes: Vec<u8>,
}

fn read(kind: &str, arg: &str, preset: Option<&'static str>) -> Result<Source> {
    if let Some(body) = preset {
        return Ok(Source {
            label: format!("preset:{arg}"),
            bytes: body.as_bytes().to_vec(),
        });
    }
    let path = Path::new(arg);
    let bytes = std::fs::read(path).map_err(|e| {
        CliError::Input(format!("{kind} `{arg}`: not a preset and cannot be read as a file ({e})"))
    })?;
    Ok(Source {
        label: arg.to_string(),
        bytes,
    })
}

fn parse<T: DeserializeOwned>(kind: &str, src: &Source) -> Result<T> {
    serde_json::from_slice(&src.bytes).map_err(|e| CliError::Input(format!("{kind} `{}`: {e}", src.label)))
}

pub fn load_model(arg: &str) -> Result<(ModelSpec, Source)> {
    let src = read("model", arg, presets::model(arg))?;
    let model: ModelSpec = parse("model", &src)?;
    model
        .validate()
        .map_err(|e| CliError::Invalid(format!("model `{}`: {e}", src.label)))?;
    Ok((model, src))
}

pub fn load_hardware(arg: &str) -> Result<(HardwareSpec, Source)> {
    let src = read("hardware", arg, presets::hardware(arg))?;
    let hw: HardwareSpec = parse("hardware", &src)?;
    hw.validate()
        .map_err(|e| CliError::Invalid(format!("hardware `{}`: {e}", src.label)))?;
    Ok((hw, src))
}

pub fn load_workload(path: &str) -> Result<(WorkloadSpec, Source)> {
    let src = read("workload", path, None)?;
    let work: WorkloadSpec = parse("workload", &src)?;
    Ok((work, src))
}

pub fn load_parallelism(path: &str) -> Result<(ParallelismConfig, Source)> {
    let src = read("config", path, None)?;
    let config: ParallelismConfig = parse("config", &src)?;
    Ok((config, src))
}

pub fn check_workload(work: &WorkloadSpec) -> Result<()> {
    work.validate().map_err(|e| CliError::Invalid(format!("workload: {e}")))
}

/// Inclusive `a..b`, comma list `1,2,4`, or a single value. Values may be
/// written in exponent form (`1e6`) if they are whole numbers.
pub fn parse_values(raw: &str) -> Result<Vec<u64>> {
    let bad = |why: &str| CliError::Input(format!("range `{raw}`: {why}"));
    let num = |s: &str| -> Result<u64> {
        let s = s.trim();
        if let Ok(v) = s.parse::<u64>() {
            return Ok(v);
        }
        match s.parse::<f64>() {
            Ok(f) if f >= 0.0 && f.fract() == 0.0 && f <= u64::MAX as f64 => Ok(f as u64),
            _ => Err(bad("expected a non-negative whole number")),
        }
    };
    let values: Vec<u64> = if let Some((a, b)) = raw.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        if a > b {
            return Err(bad("start exceeds end"));
        }
        if b - a > 10_000_000 {
            return Err(bad("more than ten million values"));
        }
        (a..=b).collect()
    } else {
        raw.split(',').map(num).collect::<Result<_>>()?
    };
    if values.is_empty() {
        return Err(bad("no values"));
    }
    Ok(values)
}

pub fn to_u32(values: &[u64], what: &str) -> Result<Vec<u32>> {
    values
        .iter()
        .map(|v| u32::try_from(*v).map_err(|_| CliError::Invalid(format!("{what} value {v} is too large"))))
        .collect()
}
