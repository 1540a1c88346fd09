//! Thread pool sizing and parallel sweep evaluation.

use helix_core::search::{evaluate_point, work_items, Evaluation, SearchError};
use helix_core::{HardwareSpec, ModelSpec, SearchSpace, WorkloadSpec};
use rayon::prelude::*;

use crate::{CliError, Result};

pub const THREADS_ENV: &str = "HELIXSIM_THREADS";

/// Thread cap from `HELIXSIM_THREADS`, or `None` to use every core.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(raw) if raw.trim().is_empty() => Ok(None),
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(CliError::Invalid(format!(
                "{THREADS_ENV} must be a positive integer (got `{raw}`)"
            ))),
        },
    }
}

pub fn build_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap()? {
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| CliError::Other(anyhow::anyhow!("starting thread pool: {e}")))
}

/// Same result as [`helix_core::search::evaluate`], with the points scored
/// on `pool`. Output order does not depend on scheduling.
pub fn evaluate_parallel(
    pool: &rayon::ThreadPool,
    space: &SearchSpace,
    model: &ModelSpec,
    work: &WorkloadSpec,
    hw: &HardwareSpec,
) -> std::result::Result<Evaluation, SearchError> {
    space.validate()?;
    let items = work_items(space, model, hw);
    let outcomes: Vec<_> = pool.install(|| {
        items
            .par_iter()
            .map(|(c, b)| (*c, *b, evaluate_point(c, *b, model, work, hw, space.hopb)))
            .collect()
    });
    Ok(Evaluation::collect(outcomes))
}
