use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StalenessDistribution {
    /// Exactly the (ramped) target every step, rounded to an integer.
    Fixed,
    /// Uniform on `{0, …, 2·target}`.
    #[default]
    UniformInteger,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StalenessSchedule {
    pub target_mean: f64,
    /// Data passes over which the target ramps up linearly from 0.
    pub ramp_epochs: f64,
    pub distribution: StalenessDistribution,
}

/// `s̄ · min(1, epoch / E_ramp)`.
pub fn ramp_target(schedule: &StalenessSchedule, epoch: f64) -> f64 {
    if schedule.ramp_epochs <= 0.0 {
        return schedule.target_mean;
    }
    schedule.target_mean * (epoch.max(0.0) / schedule.ramp_epochs).min(1.0)
}

impl StalenessSchedule {
    /// Largest staleness this schedule can ever request.
    pub fn max_staleness(&self) -> u64 {
        match self.distribution {
            StalenessDistribution::Fixed => self.target_mean.round() as u64,
            StalenessDistribution::UniformInteger => (2.0 * self.target_mean).round() as u64,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, epoch: f64, rng: &mut R) -> u64 {
        let target = ramp_target(self, epoch);
        match self.distribution {
            StalenessDistribution::Fixed => target.round() as u64,
            StalenessDistribution::UniformInteger => {
                let hi = (2.0 * target).round() as u64;
                rng.random_range(0..=hi)
            }
        }
    }
}

/// The `[staleness]` config section for the serial-stale protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StalenessConfig {
    pub target_mean: f64,
    pub ramp_epochs: f64,
    pub distribution: StalenessDistribution,
    /// Multiplies the learning rate when `target_mean >= lr_threshold`.
    pub lr_multiplier: f64,
    pub lr_threshold: f64,
    /// Snapshots kept; defaults to the largest requestable staleness + 1.
    pub history: Option<usize>,
}

impl Default for StalenessConfig {
    fn default() -> Self {
        Self {
            target_mean: 0.0,
            ramp_epochs: 3.0,
            distribution: StalenessDistribution::UniformInteger,
            lr_multiplier: 1.0,
            lr_threshold: 20.0,
            history: None,
        }
    }
}

impl StalenessConfig {
    pub fn schedule(&self) -> StalenessSchedule {
        StalenessSchedule {
            target_mean: self.target_mean,
            ramp_epochs: self.ramp_epochs,
            distribution: self.distribution,
        }
    }

    pub fn history_depth(&self) -> usize {
        self.history
            .unwrap_or(self.schedule().max_staleness() as usize + 1)
    }

    pub fn lr_factor(&self) -> f64 {
        if self.target_mean >= self.lr_threshold {
            self.lr_multiplier
        } else {
            1.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_mean >= 0.0 && self.target_mean.is_finite()) {
            return Err(invalid("staleness target_mean must be >= 0"));
        }
        if !(self.ramp_epochs >= 0.0 && self.ramp_epochs.is_finite()) {
            return Err(invalid("staleness ramp_epochs must be >= 0"));
        }
        if !(self.lr_multiplier > 0.0 && self.lr_multiplier.is_finite()) {
            return Err(invalid("staleness lr_multiplier must be positive"));
        }
        if self.history == Some(0) {
            return Err(invalid("staleness history must hold at least one snapshot"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;

    fn sched(target: f64, dist: StalenessDistribution) -> StalenessSchedule {
        StalenessSchedule {
            target_mean: target,
            ramp_epochs: 3.0,
            distribution: dist,
        }
    }

    #[test]
    fn ramp_points() {
        let s = sched(20.0, StalenessDistribution::Fixed);
        assert_eq!(ramp_target(&s, 0.0), 0.0);
        assert_eq!(ramp_target(&s, 1.5), 10.0);
        assert_eq!(ramp_target(&s, 3.0), 20.0);
        assert_eq!(ramp_target(&s, 7.0), 20.0);
        let no_ramp = StalenessSchedule { ramp_epochs: 0.0, ..s };
        assert_eq!(ramp_target(&no_ramp, 0.0), 20.0);
    }

    #[test]
    fn uniform_integer_mean() {
        let s = sched(20.0, StalenessDistribution::UniformInteger);
        let mut rng = derive_rng(3, &[]);
        let draws: Vec<u64> = (0..10_000).map(|_| s.sample(10.0, &mut rng)).collect();
        let mean = draws.iter().sum::<u64>() as f64 / draws.len() as f64;
        assert!((18.0..=22.0).contains(&mean), "{mean}");
        assert!(draws.iter().all(|&d| d <= 40));
        assert_eq!(s.max_staleness(), 40);
    }

    #[test]
    fn lr_trick_applies_above_threshold() {
        let mut c = StalenessConfig { lr_multiplier: 0.5, ..Default::default() };
        c.target_mean = 19.0;
        assert_eq!(c.lr_factor(), 1.0);
        c.target_mean = 20.0;
        assert_eq!(c.lr_factor(), 0.5);
        assert_eq!(c.history_depth(), 41);
    }
}
