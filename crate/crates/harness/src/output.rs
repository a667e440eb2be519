//! Summary statistics and CSV/JSON serialization.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::HarnessError;
use crate::run::{Row, POS_ERR};

pub const CSV_HEADER: [&str; 5] = ["trial", "step", "node", "metric", "value"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub per_node: Vec<f64>,
    /// Mean over trials and nodes.
    pub per_step: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: String,
    pub trials: usize,
    pub seed: u64,
    pub consensus_steps: usize,
    pub steps: usize,
    pub nodes: usize,
    pub rows: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
    /// Root mean square of `pos_err` over every row, for single-object runs.
    pub prmse: Option<f64>,
}

fn mean_of(sum: f64, n: usize) -> f64 {
    if n == 0 { f64::NAN } else { sum / n as f64 }
}

pub fn summarize(cfg: &ExperimentConfig, rows: &[Row]) -> Summary {
    let steps = cfg.scenario.steps;
    let nodes = rows.iter().map(|r| r.node + 1).max().unwrap_or(0);
    let mut acc: BTreeMap<&str, (f64, usize, Vec<(f64, usize)>, Vec<(f64, usize)>)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(r.metric).or_insert_with(|| (0.0, 0, vec![(0.0, 0); nodes], vec![(0.0, 0); steps]));
        e.0 += r.value;
        e.1 += 1;
        e.2[r.node].0 += r.value;
        e.2[r.node].1 += 1;
        e.3[r.step].0 += r.value;
        e.3[r.step].1 += 1;
    }
    let metrics = acc
        .into_iter()
        .map(|(k, (s, n, per_node, per_step))| {
            let m = MetricSummary {
                mean: mean_of(s, n),
                per_node: per_node.iter().map(|&(s, n)| mean_of(s, n)).collect(),
                per_step: per_step.iter().map(|&(s, n)| mean_of(s, n)).collect(),
            };
            (k.to_string(), m)
        })
        .collect();
    let errs: Vec<f64> = rows.iter().filter(|r| r.metric == POS_ERR).map(|r| r.value).collect();
    let prmse = (!errs.is_empty()).then(|| (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt());
    Summary {
        algorithm: cfg.algorithm.name().to_string(),
        trials: cfg.trials,
        seed: cfg.seed,
        consensus_steps: cfg.consensus_steps,
        steps,
        nodes,
        rows: rows.len(),
        metrics,
        prmse,
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv<W: std::io::Write>(w: W, rows: &[Row]) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| HarnessError::Io(e.to_string());
    out.write_record(CSV_HEADER).map_err(io)?;
    for r in rows {
        out.write_record([r.trial.to_string(), r.step.to_string(), r.node.to_string(), r.metric.to_string(), format_value(r.value)]).map_err(io)?;
    }
    out.flush().map_err(|e| HarnessError::Io(e.to_string()))
}

pub fn csv_string(rows: &[Row]) -> Result<String, HarnessError> {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows)?;
    String::from_utf8(buf).map_err(|e| HarnessError::Io(e.to_string()))
}

/// Writes `results.csv` and `summary.json` under `dir` and returns their paths.
pub fn write_outputs(dir: &Path, rows: &[Row], summary: &Summary) -> Result<(PathBuf, PathBuf), HarnessError> {
    let io = |e: std::io::Error| HarnessError::Io(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    let csv_path = dir.join("results.csv");
    write_csv(fs::File::create(&csv_path).map_err(io)?, rows)?;
    let json_path = dir.join("summary.json");
    let json = serde_json::to_string_pretty(summary).map_err(|e| HarnessError::Io(e.to_string()))?;
    fs::write(&json_path, json + "\n").map_err(io)?;
    Ok((csv_path, json_path))
}
