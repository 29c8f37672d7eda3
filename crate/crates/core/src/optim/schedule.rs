use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    #[default]
    Constant,
    /// `γ₀·β^{tN/(2T)}`
    ExponentialDecay,
    /// `γ₀` until `anneal_start`, then linearly down to 0 at `anneal_end`
    /// (both in passes over the training set).
    LinearAnneal,
}

/// Learning rate as a function of the update index `t`.
///
/// `workers_n` is the number of mini-batches folded into one update (N for
/// synchronous training, 1 for asynchronous and serial training) and
/// `batches_per_epoch` is `T = |X| / B`, so `t·N/T` is the number of passes
/// over the training data after `t` updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub gamma0: f64,
    pub beta: f64,
    pub workers_n: usize,
    pub batches_per_epoch: f64,
    pub anneal_start: f64,
    pub anneal_end: f64,
    pub scale_with_n: bool,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Constant,
            gamma0: 0.1,
            beta: 0.94,
            workers_n: 1,
            batches_per_epoch: 1.0,
            anneal_start: 0.0,
            anneal_end: 1.0,
            scale_with_n: false,
        }
    }
}

impl LrSchedule {
    pub fn constant(gamma0: f64) -> Self {
        Self {
            gamma0,
            ..Self::default()
        }
    }

    pub fn exponential(gamma0: f64, beta: f64, workers_n: usize, batches_per_epoch: f64) -> Self {
        Self {
            kind: ScheduleKind::ExponentialDecay,
            gamma0,
            beta,
            workers_n,
            batches_per_epoch,
            ..Self::default()
        }
    }

    pub fn linear_anneal(gamma0: f64, batches_per_epoch: f64, start: f64, end: f64) -> Self {
        Self {
            kind: ScheduleKind::LinearAnneal,
            gamma0,
            batches_per_epoch,
            anneal_start: start,
            anneal_end: end,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) {
            return Err(invalid("gamma0 must be positive"));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(invalid("beta must lie in (0, 1]"));
        }
        if self.workers_n == 0 {
            return Err(invalid("workers_n must be at least 1"));
        }
        if !(self.batches_per_epoch >= 1.0) {
            return Err(invalid("batches_per_epoch must be at least 1"));
        }
        if self.kind == ScheduleKind::LinearAnneal
            && !(self.anneal_start >= 0.0 && self.anneal_end > self.anneal_start)
        {
            return Err(invalid("linear anneal needs 0 <= start < end"));
        }
        Ok(())
    }

    pub fn initial_rate(&self) -> f64 {
        if self.scale_with_n {
            self.gamma0 * self.workers_n as f64
        } else {
            self.gamma0
        }
    }

    /// Passes over the training data after `t` updates.
    pub fn data_epoch(&self, t: u64) -> f64 {
        t as f64 * self.workers_n as f64 / self.batches_per_epoch
    }

    pub fn lr_at(&self, t: u64) -> f64 {
        let g0 = self.initial_rate();
        match self.kind {
            ScheduleKind::Constant => g0,
            ScheduleKind::ExponentialDecay => g0 * self.beta.powf(self.data_epoch(t) / 2.0),
            ScheduleKind::LinearAnneal => {
                let e = self.data_epoch(t);
                let frac = if e <= self.anneal_start {
                    1.0
                } else if e >= self.anneal_end {
                    0.0
                } else {
                    (self.anneal_end - e) / (self.anneal_end - self.anneal_start)
                };
                g0 * frac
            }
        }
    }
}
