use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::trace::{match_gradients, EventTrace, Resolution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub min: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std_dev: f64,
    pub count: usize,
}

/// `None` for an empty slice.
pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    let std_dev = if n > 1 {
        (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(Summary {
        min: sorted[0],
        mean,
        median,
        max: sorted[n - 1],
        std_dev,
        count: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerStaleness {
    pub layer: Option<usize>,
    #[serde(flatten)]
    pub summary: Summary,
}

/// Per-layer staleness of applied gradients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StalenessStats {
    pub rows: Vec<LayerStaleness>,
    /// Over every applied (gradient, layer) pair.
    pub overall: Option<Summary>,
    /// Sends that were never applied or dropped (e.g. cut off at run end).
    pub unresolved_sends: usize,
    pub dropped: usize,
}

impl StalenessStats {
    pub fn layer(&self, layer: usize) -> Option<&Summary> {
        self.rows
            .iter()
            .find(|r| r.layer == Some(layer))
            .map(|r| &r.summary)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["layer", "min", "mean", "median", "max", "std_dev", "count"])?;
        for r in &self.rows {
            let s = &r.summary;
            w.write_record([
                r.layer.map_or_else(String::new, |l| l.to_string()),
                s.min.to_string(),
                s.mean.to_string(),
                s.median.to_string(),
                s.max.to_string(),
                s.std_dev.to_string(),
                s.count.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }
}

/// Staleness (apply version minus read version, per shard) of every applied
/// gradient, grouped by layer. Dropped gradients are excluded. A trace with
/// applies or drops that cannot be matched to a send is rejected.
pub fn measure_staleness(trace: &EventTrace) -> Result<StalenessStats> {
    let matched = match_gradients(trace);
    if !matched.orphans.is_empty() {
        return Err(Error::Trace(format!(
            "{} unmatched events, first: {}",
            matched.orphans.len(),
            matched.orphans[0]
        )));
    }
    let mut by_layer: BTreeMap<Option<usize>, Vec<f64>> = BTreeMap::new();
    let mut all = Vec::new();
    let mut dropped = 0;
    for r in &matched.records {
        match r.resolution {
            Resolution::Applied => {
                let s = r.staleness();
                if s < 0 {
                    return Err(Error::Trace(format!(
                        "worker {} shard {}: applied at version {} before its read at {}",
                        r.worker, r.shard, r.resolved_version, r.read_version
                    )));
                }
                by_layer.entry(r.layer).or_default().push(s as f64);
                all.push(s as f64);
            }
            Resolution::Dropped => dropped += 1,
        }
    }
    let rows = by_layer
        .into_iter()
        .map(|(layer, v)| LayerStaleness {
            layer,
            summary: summarize(&v).expect("non-empty group"),
        })
        .collect();
    Ok(StalenessStats {
        rows,
        overall: summarize(&all),
        unresolved_sends: matched.pending_sends,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{EventKind, TraceEvent};

    fn ev(time: f64, kind: EventKind, worker: usize, layer: usize, version: u64) -> TraceEvent {
        TraceEvent { time, kind, worker, shard: 0, iter: None, layer: Some(layer), version }
    }

    #[test]
    fn summary_by_hand() {
        let s = summarize(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.min, s.median, s.max, s.count), (1.0, 2.5, 4.0, 4));
        assert_eq!(s.mean, 2.5);
        assert!((s.std_dev - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(summarize(&[7.0]).unwrap().std_dev, 0.0);
        assert!(summarize(&[]).is_none());
    }

    #[test]
    fn read_five_applied_nine() {
        let trace = EventTrace {
            events: vec![
                ev(0.0, EventKind::Read, 0, 0, 5),
                ev(1.0, EventKind::Send, 0, 0, 5),
                ev(2.0, EventKind::Apply, 0, 0, 9),
            ],
        };
        let stats = measure_staleness(&trace).unwrap();
        assert_eq!(stats.layer(0).unwrap().mean, 4.0);
        assert_eq!(
            stats.to_csv(),
            "layer,min,mean,median,max,std_dev,count\n0,4,4,4,4,0,1\n"
        );
    }

    #[test]
    fn orphan_apply_is_reported() {
        let trace = EventTrace {
            events: vec![ev(0.0, EventKind::Apply, 0, 0, 1)],
        };
        assert!(measure_staleness(&trace).is_err());
    }

    #[test]
    fn dropped_gradients_excluded() {
        let mut trace = EventTrace::new();
        for (w, kind) in [(0, EventKind::Apply), (1, EventKind::Drop)] {
            trace.push(TraceEvent { iter: Some(0), ..ev(0.0, EventKind::Read, w, 0, 0) });
            trace.push(TraceEvent { iter: Some(0), ..ev(1.0, EventKind::Send, w, 0, 0) });
            trace.push(TraceEvent { iter: Some(0), ..ev(1.0, kind, w, 0, if w == 0 { 0 } else { 1 }) });
        }
        let stats = measure_staleness(&trace).unwrap();
        assert_eq!(stats.dropped, 1);
        assert_eq!(stats.layer(0).unwrap().count, 1);
        assert_eq!(stats.layer(0).unwrap().max, 0.0);
    }
}
