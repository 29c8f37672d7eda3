use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::harness::{epochs_to_epsilon, run_experiment, ExperimentConfig, Protocol, RunStatus};
use crate::rng::{derive_rng, domain};
use crate::sim::{sample_duration, LatencyModel};

use super::arrivals::ArrivalStats;
use super::curve::IterationsCurve;

pub const DEFAULT_MC_ITERATIONS: usize = 100_000;

/// Independent Monte-Carlo streams; fixed so results do not depend on the
/// thread count.
const MC_CHUNKS: usize = 16;

/// Where per-iteration arrival times come from.
#[derive(Debug, Clone)]
pub enum LatencySource {
    Model(LatencyModel),
    Arrivals(ArrivalStats),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub b: usize,
    pub iterations: f64,
    pub mean_iter_time: f64,
    pub est_total_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigEstimate {
    pub total: usize,
    pub rows: Vec<SplitRow>,
    pub best: SplitRow,
}

impl ConfigEstimate {
    pub fn row(&self, n: usize) -> Option<&SplitRow> {
        self.rows.iter().find(|r| r.n == n)
    }

    /// `N,b,iterations,mean_iter_time,est_total_time`
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["N", "b", "iterations", "mean_iter_time", "est_total_time"])?;
        for r in &self.rows {
            w.write_record([
                r.n.to_string(),
                r.b.to_string(),
                r.iterations.to_string(),
                r.mean_iter_time.to_string(),
                r.est_total_time.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean time to the `k`-th of `total` simultaneously started workers, for
/// every `k` (index `k - 1`), over `iterations` Monte-Carlo draws.
pub fn mean_kth_arrival(latency: &LatencyModel, total: usize, iterations: usize, seed: u64) -> Result<Vec<f64>> {
    if total == 0 || iterations == 0 {
        return Err(invalid("need at least one worker and one iteration"));
    }
    let latency = latency.resolved()?;
    latency.validate()?;
    let sums: Vec<Vec<f64>> = (0..MC_CHUNKS)
        .into_par_iter()
        .map(|c| {
            let count = iterations / MC_CHUNKS + usize::from(c < iterations % MC_CHUNKS);
            let mut rng = derive_rng(seed, &[domain::MONTE_CARLO, total as u64, c as u64]);
            let mut sum = vec![0.0; total];
            let mut buf = vec![0.0; total];
            for _ in 0..count {
                for (k, x) in buf.iter_mut().enumerate() {
                    *x = sample_duration(&latency, k, &mut rng);
                }
                buf.sort_unstable_by(f64::total_cmp);
                for (s, x) in sum.iter_mut().zip(&buf) {
                    *s += x;
                }
            }
            sum
        })
        .collect();
    let mut total_sum = vec![0.0; total];
    for chunk in &sums {
        for (t, s) in total_sum.iter_mut().zip(chunk) {
            *t += s;
        }
    }
    Ok(total_sum.into_iter().map(|s| s / iterations as f64).collect())
}

/// Estimated running time `iterations(N) · E[N-th arrival of N + b]` for
/// every split of `total` machines the curve covers, and its argmin.
pub fn best_config(
    total: usize,
    curve: &IterationsCurve,
    source: &LatencySource,
    mc_iterations: usize,
    seed: u64,
) -> Result<ConfigEstimate> {
    let lo = curve.min_n().max(1);
    let hi = total.min(curve.max_n());
    if lo > hi {
        return Err(invalid(format!(
            "no split of {total} machines lies in the curve's range [{}, {}]",
            curve.min_n(),
            curve.max_n()
        )));
    }
    let means: Vec<f64> = match source {
        LatencySource::Model(m) => mean_kth_arrival(m, total, mc_iterations, seed)?,
        LatencySource::Arrivals(stats) => {
            if stats.total_workers != total {
                return Err(invalid(format!(
                    "arrivals were recorded with {} workers, not {total}",
                    stats.total_workers
                )));
            }
            (1..=total)
                .map(|k| stats.mean_kth(k).ok_or_else(|| invalid(format!("no iteration saw {k} arrivals"))))
                .collect::<Result<_>>()?
        }
    };
    let mut rows = Vec::with_capacity(hi - lo + 1);
    for n in lo..=hi {
        let iterations = curve.at(n)?;
        let mean_iter_time = means[n - 1];
        rows.push(SplitRow {
            n,
            b: total - n,
            iterations,
            mean_iter_time,
            est_total_time: iterations * mean_iter_time,
        });
    }
    let best = rows
        .iter()
        .min_by(|a, b| a.est_total_time.total_cmp(&b.est_total_time))
        .cloned()
        .expect("nonempty range");
    Ok(ConfigEstimate { total, rows, best })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    #[serde(rename = "N")]
    pub n: usize,
    pub iterations: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CurveReport {
    pub epsilon: Option<f64>,
    pub points: Vec<CurvePoint>,
    pub curve: Option<IterationsCurve>,
    pub warnings: Vec<String>,
}

/// Sync runs (b = 0) of `base` for every `N`, reporting the first iteration
/// at which `base.convergence` is met. Runs that never converge are excluded
/// from the curve and reported as warnings.
pub fn iterations_to_converge(base: &ExperimentConfig, ns: &[usize]) -> Result<CurveReport> {
    let results: Vec<Result<CurvePoint>> = ns
        .par_iter()
        .map(|&n| {
            let mut cfg = base.clone();
            cfg.protocol = Protocol::Sync;
            cfg.workers_n = n;
            cfg.backups_b = 0;
            cfg.record_trace = false;
            let out = run_experiment(&cfg)?;
            let iterations = match out.status {
                RunStatus::Completed => epochs_to_epsilon(&out.rows, &cfg.convergence),
                _ => None,
            };
            Ok(CurvePoint { n, iterations })
        })
        .collect();
    let points = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut warnings = Vec::new();
    let mut samples = Vec::new();
    for p in &points {
        match p.iterations {
            Some(it) => samples.push((p.n, it)),
            None => warnings.push(format!("N = {} did not converge; excluded from the curve", p.n)),
        }
    }
    let curve = match IterationsCurve::new(samples) {
        Ok(c) => Some(c),
        Err(e) => {
            warnings.push(format!("no curve: {e}"));
            None
        }
    };
    Ok(CurveReport {
        epsilon: base.convergence.epsilon,
        points,
        curve,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic(n: usize) -> f64 {
        (1..=n).map(|i| 1.0 / i as f64).sum()
    }

    #[test]
    fn monte_carlo_matches_exponential_order_statistics() {
        let means = mean_kth_arrival(&LatencyModel::exponential(1.0), 10, 40_000, 1).unwrap();
        for k in 1..=10 {
            let exact = harmonic(10) - harmonic(10 - k);
            assert!((means[k - 1] - exact).abs() < 0.03 * exact.max(0.3), "k={k}");
        }
    }

    #[test]
    fn deterministic_latency_prefers_no_backups() {
        let curve = IterationsCurve::new(vec![(1, 1000.0), (10, 200.0)]).unwrap();
        let est = best_config(
            10,
            &curve,
            &LatencySource::Model(LatencyModel::deterministic(1.0)),
            100,
            0,
        )
        .unwrap();
        assert_eq!(est.best.n, 10);
        assert_eq!(est.best.b, 0);
        assert_eq!(est.rows.len(), 10);
        for w in est.rows.windows(2) {
            assert!(w[1].est_total_time < w[0].est_total_time);
        }
    }

    #[test]
    fn empty_range_rejected() {
        let curve = IterationsCurve::new(vec![(50, 10.0), (100, 5.0)]).unwrap();
        let src = LatencySource::Model(LatencyModel::deterministic(1.0));
        assert!(best_config(40, &curve, &src, 10, 0).is_err());
    }

    #[test]
    fn table_is_recomputable_and_best_is_argmin() {
        let curve = IterationsCurve::new(vec![(2, 900.0), (6, 400.0), (12, 300.0)]).unwrap();
        let est = best_config(12, &curve, &LatencySource::Model(LatencyModel::pareto_mixture()), 5_000, 3).unwrap();
        for r in &est.rows {
            assert_eq!(r.est_total_time, r.iterations * r.mean_iter_time);
            assert_eq!(r.n + r.b, 12);
        }
        let brute = est
            .rows
            .iter()
            .fold(&est.rows[0], |m, r| if r.est_total_time < m.est_total_time { r } else { m });
        assert_eq!(&est.best, brute);
        let mut buf = Vec::new();
        est.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("N,b,iterations,mean_iter_time,est_total_time\n2,10,900,"));
    }

    #[test]
    fn recorded_arrivals_work_as_a_source() {
        let stats = ArrivalStats::from_offsets(3, vec![vec![1.0, 2.0, 9.0], vec![1.0, 2.0, 7.0]], &[1]).unwrap();
        let curve = IterationsCurve::new(vec![(2, 100.0), (3, 90.0)]).unwrap();
        let est = best_config(3, &curve, &LatencySource::Arrivals(stats.clone()), 0, 0).unwrap();
        assert_eq!(est.row(2).unwrap().mean_iter_time, 2.0);
        assert_eq!(est.row(3).unwrap().mean_iter_time, 8.0);
        assert_eq!(est.best.n, 2);
        assert!(best_config(4, &curve, &LatencySource::Arrivals(stats), 0, 0).is_err());
    }
}
