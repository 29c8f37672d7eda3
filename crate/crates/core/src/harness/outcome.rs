use serde::Serialize;

use crate::error::Result;
use crate::sim::Workload;
use crate::tensor::LayeredParams;
use crate::trace::EventTrace;

use super::metrics::{EvalTarget, MetricsRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    /// A loss or parameter became non-finite; rows stop at the last finite
    /// evaluation.
    Diverged,
    /// Timeout collection exhausted its retries.
    Aborted,
}

/// One synchronous iteration as seen by the bottom shard.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: u64,
    /// When the iteration's parameters became readable.
    pub start: f64,
    /// When the iteration's update was applied on every shard.
    pub apply_time: f64,
    pub aggregated: usize,
    /// Offsets from `start` of every gradient tagged with this iteration
    /// (accepted or dropped), ascending.
    pub arrivals: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunStats {
    pub epochs: f64,
    pub time_s: f64,
    /// Synchronous iterations, fully applied asynchronous gradients, or
    /// serial steps.
    pub updates: u64,
    /// Gradients sent, counted at the bottom shard.
    pub gradients_sent: u64,
    pub gradients_applied: u64,
    pub gradients_dropped: u64,
    /// Over every (gradient, shard) apply.
    pub staleness_mean: f64,
    pub staleness_max: u64,
    pub timeout_retries: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub status: RunStatus,
    pub rows: Vec<MetricsRow>,
    pub trace: EventTrace,
    pub final_params: LayeredParams,
    /// Raw flat parameters at each evaluation, aligned with `rows`.
    pub checkpoints: Vec<Vec<f64>>,
    pub iterations: Vec<IterationRecord>,
    pub stats: RunStats,
}

/// Running mean of applied-gradient staleness.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct StalenessTally {
    sum: f64,
    count: u64,
    max: u64,
}

impl StalenessTally {
    pub fn add(&mut self, s: u64) {
        self.sum += s as f64;
        self.count += 1;
        self.max = self.max.max(s);
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    pub fn max(&self) -> u64 {
        self.max
    }
}

/// Evaluation cadence shared by every backend: rows at epoch 0, then each
/// time the epoch count passes a multiple of `eval_every`, then at the end.
pub(crate) struct Evaluator<'a> {
    workload: &'a Workload,
    target: EvalTarget,
    eval_every: f64,
    next_k: u64,
    pub rows: Vec<MetricsRow>,
    pub checkpoints: Vec<Vec<f64>>,
}

pub(crate) struct EvalPoint<'p> {
    pub epoch: f64,
    pub time_s: f64,
    pub raw: &'p LayeredParams,
    pub eval: &'p LayeredParams,
    pub lr: f64,
    pub staleness_mean: f64,
}

impl<'a> Evaluator<'a> {
    pub fn new(workload: &'a Workload, use_ema: bool, eval_every: f64) -> Self {
        Self {
            workload,
            target: if use_ema { EvalTarget::Ema } else { EvalTarget::Raw },
            eval_every,
            next_k: 0,
            rows: Vec::new(),
            checkpoints: Vec::new(),
        }
    }

    pub fn is_due(&self, epoch: f64) -> bool {
        epoch >= self.next_k as f64 * self.eval_every
    }

    /// Records a row. Returns `false` (and records nothing) when the
    /// evaluation is not finite.
    pub fn record(&mut self, p: EvalPoint<'_>) -> Result<bool> {
        while self.is_due(p.epoch) {
            self.next_k += 1;
        }
        let (train_loss, test_metric) = match self.workload.evaluate(p.eval)? {
            Some(e) => (e.train_loss, e.test_metric),
            None => (f64::NAN, f64::NAN),
        };
        if self.workload.is_trainable()
            && !(train_loss.is_finite() && test_metric.is_finite() && p.raw.is_finite())
        {
            return Ok(false);
        }
        self.rows.push(MetricsRow {
            epoch: p.epoch,
            time_s: p.time_s,
            train_loss,
            test_metric,
            lr: p.lr,
            staleness_mean: p.staleness_mean,
            eval_target: self.target,
        });
        self.checkpoints.push(p.raw.flat());
        Ok(true)
    }

    /// Final row unless the last one already covers `epoch`.
    pub fn finish(&mut self, p: EvalPoint<'_>) -> Result<bool> {
        if self.rows.last().is_some_and(|r| r.epoch >= p.epoch) {
            return Ok(true);
        }
        self.record(p)
    }
}
