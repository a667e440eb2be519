//! Monte Carlo harness for the `netrack-core` trackers: configuration, trial orchestration and
//! CSV/JSON output.

pub mod config;
pub mod error;
pub mod model;
pub mod output;
pub mod run;

use std::path::PathBuf;

pub use config::{Algorithm, ExperimentConfig, Overrides};
pub use error::HarnessError;
pub use output::Summary;
pub use run::{Execution, Row};

pub struct ExperimentResult {
    pub rows: Vec<Row>,
    pub summary: Summary,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    run_experiment_with(cfg, Execution::Parallel)
}

pub fn run_experiment_with(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let rows = run::run_trials(cfg, exec)?;
    let summary = output::summarize(cfg, &rows);
    Ok(ExperimentResult { rows, summary })
}

/// Runs the experiment and writes `results.csv` and `summary.json` to `cfg.out`.
pub fn run_and_write(cfg: &ExperimentConfig) -> Result<(ExperimentResult, PathBuf, PathBuf), HarnessError> {
    let res = run_experiment(cfg)?;
    let (csv, json) = output::write_outputs(std::path::Path::new(&cfg.out), &res.rows, &res.summary)?;
    Ok((res, csv, json))
}
