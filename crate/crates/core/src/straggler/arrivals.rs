use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::harness::IterationRecord;
use crate::trace::{EventKind, EventTrace};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KStats {
    pub k: usize,
    pub mean: f64,
    pub median: f64,
    pub p10: f64,
    pub p90: f64,
    pub std_err: f64,
    pub count: usize,
}

/// Per-iteration arrival offsets (time since the iteration started, sorted)
/// and summaries for the requested `k`s.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalStats {
    pub total_workers: usize,
    pub iterations: Vec<Vec<f64>>,
    pub rows: Vec<KStats>,
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl ArrivalStats {
    /// Builds stats from sorted per-iteration offsets. Iterations with fewer
    /// than `k` arrivals do not contribute to `k`'s row.
    pub fn from_offsets(total_workers: usize, iterations: Vec<Vec<f64>>, ks: &[usize]) -> Result<Self> {
        let mut rows = Vec::with_capacity(ks.len());
        for &k in ks {
            if k == 0 || k > total_workers {
                return Err(invalid(format!("k = {k} outside 1..={total_workers}")));
            }
            let mut times = kth_times(&iterations, k);
            if times.is_empty() {
                return Err(invalid(format!("no iteration saw {k} arrivals")));
            }
            times.sort_by(f64::total_cmp);
            let n = times.len() as f64;
            let mean = times.iter().sum::<f64>() / n;
            let var = if times.len() > 1 {
                times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            rows.push(KStats {
                k,
                mean,
                median: quantile(&times, 0.5),
                p10: quantile(&times, 0.1),
                p90: quantile(&times, 0.9),
                std_err: (var / n).sqrt(),
                count: times.len(),
            });
        }
        Ok(Self {
            total_workers,
            iterations,
            rows,
        })
    }

    pub fn row(&self, k: usize) -> Option<&KStats> {
        self.rows.iter().find(|r| r.k == k)
    }

    /// Mean over iterations of the `k`-th arrival, for any `k`.
    pub fn mean_kth(&self, k: usize) -> Option<f64> {
        let times = kth_times(&self.iterations, k);
        (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64)
    }

    /// `k,mean,median,p10,p90`
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["k", "mean", "median", "p10", "p90"])?;
        for r in &self.rows {
            w.write_record([
                r.k.to_string(),
                r.mean.to_string(),
                r.median.to_string(),
                r.p10.to_string(),
                r.p90.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `k,time,fraction` for every requested `k`.
    pub fn write_cdf_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["k", "time", "fraction"])?;
        for r in &self.rows {
            for (t, f) in arrival_cdf(self, r.k)? {
                w.write_record([r.k.to_string(), t.to_string(), f.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn kth_times(iterations: &[Vec<f64>], k: usize) -> Vec<f64> {
    iterations
        .iter()
        .filter(|a| a.len() >= k && k > 0)
        .map(|a| a[k - 1])
        .collect()
}

/// Arrival stats of completed iterations as recorded by a run.
pub fn arrival_stats_from_records(
    records: &[IterationRecord],
    total_workers: usize,
    ks: &[usize],
) -> Result<ArrivalStats> {
    let iterations = records.iter().map(|r| r.arrivals.clone()).collect();
    ArrivalStats::from_offsets(total_workers, iterations, ks)
}

/// Arrival stats from a sync trace. A worker's arrival is its send to the
/// bottom layer of shard 0; iteration `t` starts when the last shard applied
/// iteration `t - 1` (at time 0 for the first). Only iterations every shard
/// applied are counted, and `N + b` is the number of distinct workers seen.
pub fn kth_arrival_stats(trace: &EventTrace, ks: &[usize]) -> Result<ArrivalStats> {
    let num_shards = trace.events.iter().map(|e| e.shard + 1).max().unwrap_or(0);
    let bottom = trace
        .events
        .iter()
        .filter(|e| e.shard == 0)
        .filter_map(|e| e.layer)
        .min();
    let workers: BTreeSet<usize> = trace.events.iter().map(|e| e.worker).collect();
    let mut applied: BTreeMap<u64, (BTreeSet<usize>, f64)> = BTreeMap::new();
    let mut sends: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for e in &trace.events {
        let Some(t) = e.iter else { continue };
        match e.kind {
            EventKind::Apply => {
                let entry = applied.entry(t).or_insert((BTreeSet::new(), f64::NEG_INFINITY));
                entry.0.insert(e.shard);
                entry.1 = entry.1.max(e.time);
            }
            EventKind::Send if e.shard == 0 && e.layer == bottom => {
                sends.entry(t).or_default().push(e.time);
            }
            _ => {}
        }
    }
    if sends.is_empty() {
        return Err(Error::Trace("no synchronous sends in trace".into()));
    }
    let mut iterations = Vec::new();
    let mut start = 0.0;
    for t in 0u64.. {
        let Some((shards, barrier)) = applied.get(&t) else { break };
        if shards.len() < num_shards {
            break;
        }
        let mut offsets: Vec<f64> = sends
            .get(&t)
            .map(|s| s.iter().map(|x| x - start).collect())
            .unwrap_or_default();
        offsets.sort_by(f64::total_cmp);
        iterations.push(offsets);
        start = *barrier;
    }
    ArrivalStats::from_offsets(workers.len(), iterations, ks)
}

/// Empirical CDF of the `k`-th arrival: `(time, fraction ≤ time)` at every
/// observed time.
pub fn arrival_cdf(stats: &ArrivalStats, k: usize) -> Result<Vec<(f64, f64)>> {
    if stats.row(k).is_none() {
        return Err(invalid(format!("k = {k} not in stats")));
    }
    let mut times = kth_times(&stats.iterations, k);
    times.sort_by(f64::total_cmp);
    let n = times.len() as f64;
    Ok(times
        .iter()
        .enumerate()
        .map(|(i, &t)| (t, (i + 1) as f64 / n))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.1) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn stats_by_hand() {
        let its = vec![vec![1.0, 3.0], vec![2.0, 5.0], vec![3.0]];
        let s = ArrivalStats::from_offsets(2, its, &[1, 2]).unwrap();
        assert_eq!(s.row(1).unwrap().mean, 2.0);
        assert_eq!(s.row(1).unwrap().count, 3);
        assert_eq!(s.row(2).unwrap().mean, 4.0);
        assert_eq!(s.row(2).unwrap().count, 2);
        assert_eq!(arrival_cdf(&s, 1).unwrap(), vec![(1.0, 1.0 / 3.0), (2.0, 2.0 / 3.0), (3.0, 1.0)]);
        assert!(arrival_cdf(&s, 3).is_err());
        assert!(ArrivalStats::from_offsets(2, vec![vec![1.0]], &[3]).is_err());
        assert!(ArrivalStats::from_offsets(2, vec![vec![1.0]], &[0]).is_err());
    }

    #[test]
    fn csv_columns() {
        let s = ArrivalStats::from_offsets(1, vec![vec![1.5], vec![1.5]], &[1]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "k,mean,median,p10,p90\n1,1.5,1.5,1.5,1.5\n");
        let mut buf = Vec::new();
        s.write_cdf_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "k,time,fraction\n1,1.5,0.5\n1,1.5,1\n");
    }
}
