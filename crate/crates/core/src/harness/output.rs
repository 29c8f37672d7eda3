use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

use super::config::{Backend, ExperimentConfig, Protocol};
use super::convergence::{epochs_to_epsilon, time_to_epsilon};
use super::metrics::write_metrics_csv;
use super::outcome::{RunOutput, RunStats, RunStatus};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub status: RunStatus,
    pub protocol: Protocol,
    pub backend: Backend,
    pub seed: u64,
    #[serde(flatten)]
    pub stats: RunStats,
    pub final_train_loss: Option<f64>,
    pub final_test_metric: Option<f64>,
    pub epsilon: Option<f64>,
    pub epochs_to_epsilon: Option<f64>,
    pub time_to_epsilon: Option<f64>,
}

impl RunSummary {
    pub fn new(cfg: &ExperimentConfig, out: &RunOutput) -> Self {
        let last = out.rows.last();
        Self {
            status: out.status,
            protocol: cfg.protocol,
            backend: cfg.backend,
            seed: cfg.seed,
            stats: out.stats.clone(),
            final_train_loss: last.map(|r| r.train_loss).filter(|v| v.is_finite()),
            final_test_metric: last.map(|r| r.test_metric).filter(|v| v.is_finite()),
            epsilon: cfg.convergence.epsilon,
            epochs_to_epsilon: epochs_to_epsilon(&out.rows, &cfg.convergence),
            time_to_epsilon: time_to_epsilon(&out.rows, &cfg.convergence),
        }
    }
}

/// Writes `config.toml` (every default resolved), `metrics.csv`,
/// `trace.jsonl` and `summary.json` into `dir`.
pub fn write_run(dir: impl AsRef<Path>, cfg: &ExperimentConfig, out: &RunOutput) -> Result<RunSummary> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml_string())?;
    write_metrics_csv(&out.rows, fs::File::create(dir.join("metrics.csv"))?)?;
    out.trace.save(dir.join("trace.jsonl"))?;
    let summary = RunSummary::new(cfg, out);
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}
