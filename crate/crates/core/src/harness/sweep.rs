use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

use super::config::ExperimentConfig;
use super::convergence::{epochs_to_epsilon, epochs_to_own_convergence, Direction};
use super::outcome::RunStatus;
use super::run::run_experiment;

/// One config key (dotted, as in the TOML file) and the values to try.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub key: String,
    pub values: Vec<toml::Value>,
}

impl SweepAxis {
    /// Parses comma-separated values as TOML literals; anything that is not
    /// a valid literal is taken as a bare string.
    pub fn parse(key: &str, values: &str) -> Result<Self> {
        let values: Vec<toml::Value> = values
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(parse_literal)
            .collect();
        if key.is_empty() || values.is_empty() {
            return Err(Error::Config("a sweep needs a key and at least one value".into()));
        }
        Ok(Self {
            key: key.to_string(),
            values,
        })
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn display_value(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// `cfg` with `key` set to `value`, re-validated.
pub fn with_override(cfg: &ExperimentConfig, key: &str, value: &toml::Value) -> Result<ExperimentConfig> {
    let mut root = toml::Table::try_from(cfg).map_err(|e| Error::Config(e.to_string()))?;
    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut table = &mut root;
    for part in path {
        table = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a table")))?;
    }
    table.insert(last.to_string(), value.clone());
    let out: ExperimentConfig = root
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("{key} = {value}: {e}")))?;
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: String,
    pub restart: usize,
    pub seed: u64,
    /// `completed`, `diverged`, `aborted` or `error: ...`.
    pub status: String,
    pub final_metric: Option<f64>,
    /// Where the run settled to within its plateau tolerance.
    pub epochs_to_converge: Option<f64>,
    pub epochs_to_epsilon: Option<f64>,
    /// Best final metric among this value's restarts.
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub key: String,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn selected(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.selected)
    }

    /// `value,restart,seed,status,final_metric,epochs_to_converge,epochs_to_epsilon,selected`
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            self.key.as_str(),
            "restart",
            "seed",
            "status",
            "final_metric",
            "epochs_to_converge",
            "epochs_to_epsilon",
            "selected",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.value.clone(),
                r.restart.to_string(),
                r.seed.to_string(),
                r.status.clone(),
                opt(r.final_metric),
                opt(r.epochs_to_converge),
                opt(r.epochs_to_epsilon),
                r.selected.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One run per axis value and restart (restart `r` uses seed `seed + r`),
/// in parallel. A failing run becomes an `error` row; the rest carry on.
pub fn sweep(base: &ExperimentConfig, axis: &SweepAxis) -> SweepTable {
    let restarts = base.restarts.max(1);
    let jobs: Vec<(usize, usize)> = (0..axis.values.len())
        .flat_map(|v| (0..restarts).map(move |r| (v, r)))
        .collect();
    let mut rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(v, r)| {
            let value = &axis.values[v];
            let seed = base.seed.wrapping_add(r as u64);
            let mut row = SweepRow {
                value: display_value(value),
                restart: r,
                seed,
                status: String::new(),
                final_metric: None,
                epochs_to_converge: None,
                epochs_to_epsilon: None,
                selected: false,
            };
            let result = with_override(base, &axis.key, value).and_then(|mut cfg| {
                cfg.seed = seed;
                cfg.record_trace = false;
                run_experiment(&cfg).map(|out| (cfg, out))
            });
            match result {
                Ok((cfg, out)) => {
                    row.status = match out.status {
                        RunStatus::Completed => "completed",
                        RunStatus::Diverged => "diverged",
                        RunStatus::Aborted => "aborted",
                    }
                    .to_string();
                    if out.status == RunStatus::Completed {
                        row.final_metric = out.rows.last().map(|r| r.test_metric);
                        row.epochs_to_converge = epochs_to_own_convergence(&out.rows, &cfg.convergence);
                        row.epochs_to_epsilon = epochs_to_epsilon(&out.rows, &cfg.convergence);
                    }
                }
                Err(e) => row.status = format!("error: {e}"),
            }
            row
        })
        .collect();

    let better = |a: f64, b: f64| match base.convergence.direction {
        Direction::Minimize => a < b,
        Direction::Maximize => a > b,
    };
    for chunk in rows.chunks_mut(restarts) {
        let mut best: Option<usize> = None;
        for (i, r) in chunk.iter().enumerate() {
            let Some(m) = r.final_metric.filter(|m| m.is_finite()) else { continue };
            if best.is_none_or(|b| better(m, chunk[b].final_metric.unwrap())) {
                best = Some(i);
            }
        }
        if let Some(b) = best {
            chunk[b].selected = true;
        }
    }
    SweepTable {
        key: axis.key.clone(),
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Protocol;

    fn base() -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            protocol: Protocol::Serial,
            batch_b: 16,
            max_epochs: 30.0,
            ..Default::default()
        };
        cfg.data.n_train = 200;
        cfg.data.n_test = 100;
        cfg
    }

    #[test]
    fn literals_and_overrides() {
        let axis = SweepAxis::parse("schedule.gamma0", "0.05, 1, async").unwrap();
        assert_eq!(axis.values[0], toml::Value::Float(0.05));
        assert_eq!(axis.values[1], toml::Value::Integer(1));
        assert_eq!(axis.values[2], toml::Value::String("async".into()));
        let cfg = with_override(&base(), "schedule.gamma0", &axis.values[1]).unwrap();
        assert_eq!(cfg.schedule.gamma0, 1.0);
        let cfg = with_override(&base(), "clip_norm", &toml::Value::Float(2.0)).unwrap();
        assert_eq!(cfg.clip_norm, Some(2.0));
        assert!(with_override(&base(), "schedule.nope", &toml::Value::Integer(1)).is_err());
        assert!(with_override(&base(), "workers_n", &toml::Value::Integer(0)).is_err());
        assert!(SweepAxis::parse("", "1").is_err());
    }

    #[test]
    fn single_value_sweep_is_a_plain_run() {
        let axis = SweepAxis::parse("schedule.gamma0", "0.2").unwrap();
        let table = sweep(&base(), &axis);
        assert_eq!(table.rows.len(), 1);
        let mut cfg = base();
        cfg.schedule.gamma0 = 0.2;
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(table.rows[0].final_metric, out.rows.last().map(|r| r.test_metric));
        assert!(table.rows[0].selected);
    }

    #[test]
    fn restarts_select_the_best_and_keep_the_rest() {
        let mut b = base();
        b.restarts = 3;
        let axis = SweepAxis::parse("schedule.gamma0", "0.1,0.3").unwrap();
        let table = sweep(&b, &axis);
        assert_eq!(table.rows.len(), 6);
        assert_eq!(table.selected().count(), 2);
        for chunk in table.rows.chunks(3) {
            let best = chunk.iter().map(|r| r.final_metric.unwrap()).fold(f64::INFINITY, f64::min);
            assert_eq!(chunk.iter().find(|r| r.selected).unwrap().final_metric, Some(best));
            assert_eq!(chunk.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![0, 1, 2]);
        }
    }

    #[test]
    fn failures_are_rows_not_aborts() {
        let axis = SweepAxis::parse("batch_b", "0,16").unwrap();
        let table = sweep(&base(), &axis);
        assert!(table.rows[0].status.starts_with("error"));
        assert_eq!(table.rows[1].status, "completed");
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "batch_b,restart,seed,status,final_metric,epochs_to_converge,epochs_to_epsilon,selected\n"
        ));
    }
}
