//! Batch runner for the `mces-core` learners: configuration, seeded trials
//! on a work pool, and CSV/JSON outputs that can be recomputed and paired.

pub mod config;
pub mod output;
pub mod presets;
pub mod runner;

use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;

pub use config::{Algorithm, DomainChoice, ExperimentConfig, OpponentChoice, PruneChoice};
pub use output::{compare, write_run, Comparison, Stat, Summary};
pub use runner::{run_trial, TrialOutput};

/// Run every trial on a pool of `cfg.threads` workers. Results come back in
/// trial order; the first failing trial fails the batch.
pub fn run_trials(cfg: &ExperimentConfig) -> Result<Vec<TrialOutput>> {
    cfg.validate()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    pool.install(|| {
        (0..cfg.trials)
            .into_par_iter()
            .map(|t| run_trial(cfg, t).with_context(|| format!("trial {t}")))
            .collect()
    })
}

/// Run and write a whole experiment.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<Summary> {
    let outputs = run_trials(cfg)?;
    write_run(out, cfg, &outputs)
}
