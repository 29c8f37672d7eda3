use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

use super::metrics::MetricsRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    #[default]
    Minimize,
    Maximize,
}

/// The test metric must reach `epsilon` and stay there for `patience`
/// consecutive evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceCriterion {
    pub epsilon: Option<f64>,
    pub patience: usize,
    pub direction: Direction,
    /// How close to its own final metric a run must settle to count as
    /// converged in sweep tables.
    pub plateau_tolerance: f64,
}

impl Default for ConvergenceCriterion {
    fn default() -> Self {
        Self {
            epsilon: None,
            patience: 3,
            direction: Direction::Minimize,
            plateau_tolerance: 0.01,
        }
    }
}

impl ConvergenceCriterion {
    pub fn new(epsilon: f64, patience: usize) -> Self {
        Self {
            epsilon: Some(epsilon),
            patience,
            plateau_tolerance: 0.01,
            direction: Direction::Minimize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 {
            return Err(invalid("convergence patience must be at least 1"));
        }
        if !(self.plateau_tolerance >= 0.0 && self.plateau_tolerance.is_finite()) {
            return Err(invalid("plateau_tolerance must be finite and non-negative"));
        }
        if matches!(self.epsilon, Some(e) if !e.is_finite()) {
            return Err(invalid("convergence epsilon must be finite"));
        }
        Ok(())
    }

    pub fn is_met(&self, value: f64) -> bool {
        match (self.epsilon, self.direction) {
            (Some(eps), Direction::Minimize) => value <= eps,
            (Some(eps), Direction::Maximize) => value >= eps,
            (None, _) => false,
        }
    }

    /// Index of the first row that starts a run of `patience` rows meeting
    /// the target. `None` when the target is never sustained or unset.
    pub fn first_sustained(&self, rows: &[MetricsRow]) -> Option<usize> {
        let p = self.patience.max(1);
        let mut streak = 0;
        for (i, row) in rows.iter().enumerate() {
            if self.is_met(row.test_metric) {
                streak += 1;
                if streak == p {
                    return Some(i + 1 - p);
                }
            } else {
                streak = 0;
            }
        }
        None
    }
}

pub fn epochs_to_epsilon(rows: &[MetricsRow], crit: &ConvergenceCriterion) -> Option<f64> {
    crit.first_sustained(rows).map(|i| rows[i].epoch)
}

/// Epoch from which every later evaluation stays within `plateau_tolerance`
/// of the run's final test metric.
pub fn epochs_to_own_convergence(rows: &[MetricsRow], crit: &ConvergenceCriterion) -> Option<f64> {
    let last = rows.last()?.test_metric;
    if !last.is_finite() {
        return None;
    }
    let settled = |r: &MetricsRow| (r.test_metric - last).abs() <= crit.plateau_tolerance;
    let first = rows.iter().rposition(|r| !settled(r)).map_or(0, |i| i + 1);
    Some(rows[first].epoch)
}

pub fn time_to_epsilon(rows: &[MetricsRow], crit: &ConvergenceCriterion) -> Option<f64> {
    crit.first_sustained(rows).map(|i| rows[i].time_s)
}
