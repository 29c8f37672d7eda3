use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal, Pareto};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatencyKind {
    #[default]
    Deterministic,
    Exponential,
    Lognormal,
    ParetoMixture,
    Empirical,
}

/// Distribution of one worker's compute-plus-communication time per step.
///
/// Only the fields of the selected `kind` are used:
///
/// * `deterministic`: always `mean`;
/// * `exponential`: rate `rate`;
/// * `lognormal`: `exp(N(mu, sigma²))`;
/// * `pareto-mixture`: with probability `fast_fraction` a Pareto(`fast_shape`)
///   draw scaled to mean `fast_mean`, otherwise a Pareto(`slow_shape`) draw
///   scaled to mean `slow_multiplier · fast_mean`;
/// * `empirical`: uniform resampling of `samples`, or of the durations listed
///   one per line in `samples_file`.
///
/// Every draw for worker `k` is multiplied by `per_worker_bias[k]` when that
/// entry exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyModel {
    pub kind: LatencyKind,
    pub mean: f64,
    pub rate: f64,
    pub mu: f64,
    pub sigma: f64,
    pub fast_fraction: f64,
    pub fast_mean: f64,
    pub fast_shape: f64,
    pub slow_multiplier: f64,
    pub slow_shape: f64,
    pub samples: Vec<f64>,
    pub samples_file: Option<PathBuf>,
    pub per_worker_bias: Vec<f64>,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            kind: LatencyKind::Deterministic,
            mean: 1.0,
            rate: 1.0,
            mu: 0.0,
            sigma: 0.5,
            fast_fraction: 0.95,
            fast_mean: 1.0,
            fast_shape: 10.0,
            slow_multiplier: 10.0,
            slow_shape: 2.5,
            samples: Vec::new(),
            samples_file: None,
            per_worker_bias: Vec::new(),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("latency {name} must be positive and finite, got {v}")))
    }
}

impl LatencyModel {
    pub fn deterministic(value: f64) -> Self {
        Self {
            kind: LatencyKind::Deterministic,
            mean: value,
            ..Self::default()
        }
    }

    pub fn exponential(rate: f64) -> Self {
        Self {
            kind: LatencyKind::Exponential,
            rate,
            ..Self::default()
        }
    }

    pub fn lognormal(mu: f64, sigma: f64) -> Self {
        Self {
            kind: LatencyKind::Lognormal,
            mu,
            sigma,
            ..Self::default()
        }
    }

    pub fn pareto_mixture() -> Self {
        Self {
            kind: LatencyKind::ParetoMixture,
            ..Self::default()
        }
    }

    pub fn empirical(samples: Vec<f64>) -> Self {
        Self {
            kind: LatencyKind::Empirical,
            samples,
            ..Self::default()
        }
    }

    pub fn with_bias(mut self, bias: Vec<f64>) -> Self {
        self.per_worker_bias = bias;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            LatencyKind::Deterministic => positive("mean", self.mean)?,
            LatencyKind::Exponential => positive("rate", self.rate)?,
            LatencyKind::Lognormal => {
                if !self.mu.is_finite() || !(self.sigma >= 0.0 && self.sigma.is_finite()) {
                    return Err(invalid("lognormal needs finite mu and sigma >= 0"));
                }
            }
            LatencyKind::ParetoMixture => {
                if !(0.0..=1.0).contains(&self.fast_fraction) {
                    return Err(invalid("fast_fraction must lie in [0, 1]"));
                }
                positive("fast_mean", self.fast_mean)?;
                positive("slow_multiplier", self.slow_multiplier)?;
                if !(self.fast_shape > 1.0 && self.slow_shape > 1.0) {
                    return Err(invalid("Pareto shapes must exceed 1 for a finite mean"));
                }
            }
            LatencyKind::Empirical => {
                if self.samples.is_empty() && self.samples_file.is_none() {
                    return Err(invalid("empirical latency needs samples or samples_file"));
                }
                for &s in &self.samples {
                    positive("sample", s)?;
                }
            }
        }
        for &b in &self.per_worker_bias {
            positive("per_worker_bias entry", b)?;
        }
        Ok(())
    }

    /// Copy with `samples_file` read into `samples`, ready for sampling.
    pub fn resolved(&self) -> Result<Self> {
        let mut out = self.clone();
        if let (LatencyKind::Empirical, Some(path)) = (self.kind, &self.samples_file) {
            out.samples.extend(read_samples(path)?);
        }
        out.validate()?;
        Ok(out)
    }

    /// Analytic mean of an unbiased draw, where one exists in closed form.
    pub fn mean_duration(&self) -> Option<f64> {
        match self.kind {
            LatencyKind::Deterministic => Some(self.mean),
            LatencyKind::Exponential => Some(1.0 / self.rate),
            LatencyKind::Lognormal => Some((self.mu + self.sigma * self.sigma / 2.0).exp()),
            LatencyKind::ParetoMixture => Some(
                self.fast_mean
                    * (self.fast_fraction + (1.0 - self.fast_fraction) * self.slow_multiplier),
            ),
            LatencyKind::Empirical if !self.samples.is_empty() => {
                Some(self.samples.iter().sum::<f64>() / self.samples.len() as f64)
            }
            LatencyKind::Empirical => None,
        }
    }

    pub fn bias(&self, worker_id: usize) -> f64 {
        self.per_worker_bias.get(worker_id).copied().unwrap_or(1.0)
    }
}

/// Draw from a Pareto with the given shape, rescaled to the given mean.
fn pareto_with_mean<R: Rng + ?Sized>(rng: &mut R, shape: f64, mean: f64) -> f64 {
    let scale = mean * (shape - 1.0) / shape;
    Pareto::new(scale, shape).expect("validated Pareto").sample(rng)
}

/// One positive duration for `worker_id`. The model must be
/// [`resolved`](LatencyModel::resolved) when it is empirical with a file.
pub fn sample_duration<R: Rng + ?Sized>(model: &LatencyModel, worker_id: usize, rng: &mut R) -> f64 {
    let raw = match model.kind {
        LatencyKind::Deterministic => model.mean,
        LatencyKind::Exponential => Exp::new(model.rate).expect("validated rate").sample(rng),
        LatencyKind::Lognormal => LogNormal::new(model.mu, model.sigma)
            .expect("validated lognormal")
            .sample(rng),
        LatencyKind::ParetoMixture => {
            if rng.random::<f64>() < model.fast_fraction {
                pareto_with_mean(rng, model.fast_shape, model.fast_mean)
            } else {
                pareto_with_mean(rng, model.slow_shape, model.slow_multiplier * model.fast_mean)
            }
        }
        LatencyKind::Empirical => {
            assert!(!model.samples.is_empty(), "empirical latency model has no samples");
            model.samples[rng.random_range(0..model.samples.len())]
        }
    };
    (raw * model.bias(worker_id)).max(f64::MIN_POSITIVE)
}

/// Reads durations in seconds, one per line. Blank lines and `#` comments are
/// skipped.
pub fn read_samples(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| {
            Error::InvalidArgument(format!("{}:{}: not a duration: {line:?}", path.display(), n + 1))
        })?;
        positive("sample", v)?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(invalid(format!("{} contains no durations", path.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;

    fn sample_mean(model: &LatencyModel, n: usize, seed: u64) -> (f64, f64) {
        let mut rng = derive_rng(seed, &[0]);
        let draws: Vec<f64> = (0..n).map(|_| sample_duration(model, 0, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (mean, (var / n as f64).sqrt())
    }

    #[test]
    fn deterministic_is_a_point_mass() {
        let m = LatencyModel::deterministic(1.5);
        let mut rng = derive_rng(0, &[]);
        assert!((0..100).all(|_| sample_duration(&m, 3, &mut rng) == 1.5));
    }

    #[test]
    fn exponential_mean() {
        let (mean, _) = sample_mean(&LatencyModel::exponential(1.0), 100_000, 3);
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn pareto_mixture_mean_matches_mixture_of_means() {
        let m = LatencyModel::pareto_mixture();
        assert!((m.mean_duration().unwrap() - 1.45).abs() < 1e-12);
        let (mean, se) = sample_mean(&m, 400_000, 5);
        // The slow component has shape 2.5 (finite variance), so the sample
        // mean is asymptotically normal.
        assert!((mean - 1.45).abs() < 4.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn lognormal_mean() {
        let m = LatencyModel::lognormal(0.0, 0.5);
        let (mean, se) = sample_mean(&m, 100_000, 9);
        assert!((mean - m.mean_duration().unwrap()).abs() < 4.0 * se);
    }

    #[test]
    fn bias_scales_one_worker() {
        let m = LatencyModel::deterministic(2.0).with_bias(vec![1.0, 10.0]);
        let mut rng = derive_rng(0, &[]);
        assert_eq!(sample_duration(&m, 1, &mut rng), 20.0);
        assert_eq!(sample_duration(&m, 2, &mut rng), 2.0);
    }

    #[test]
    fn empirical_resamples_supplied_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lat.txt");
        std::fs::write(&path, "# seconds\n0.5\n\n2.25\n").unwrap();
        let m = LatencyModel {
            kind: LatencyKind::Empirical,
            samples_file: Some(path),
            ..LatencyModel::default()
        }
        .resolved()
        .unwrap();
        let mut rng = derive_rng(1, &[]);
        for _ in 0..50 {
            let d = sample_duration(&m, 0, &mut rng);
            assert!(d == 0.5 || d == 2.25);
        }
        let bad = dir.path().join("bad.txt");
        std::fs::write(&bad, "1.0\nfast\n").unwrap();
        assert!(read_samples(&bad).is_err());
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(LatencyModel::exponential(0.0).validate().is_err());
        assert!(LatencyModel::deterministic(-1.0).validate().is_err());
        assert!(LatencyModel::empirical(vec![]).validate().is_err());
        assert!(LatencyModel::deterministic(1.0).with_bias(vec![0.0]).validate().is_err());
    }
}
