use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::matching::{match_gradients, Resolution};
use super::{EventKind, EventTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    Async,
    Sync,
}

/// What the validator expects of the per-iteration aggregation count in a
/// synchronous trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AggregationCheck {
    /// Every iteration aggregates the same number as iteration 0.
    #[default]
    Infer,
    Exactly(usize),
    /// Variable counts (timeout collection).
    Any,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub protocol: ProtocolKind,
    pub reads: usize,
    pub sends: usize,
    pub applies: usize,
    pub drops: usize,
    pub iterations: u64,
    pub aggregated_per_iteration: Option<usize>,
    pub max_staleness: i64,
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks a trace against the protocol invariants:
///
/// * event times are finite and nondecreasing;
/// * every send follows a read and is consumed by exactly one apply or drop;
/// * staleness is never negative, and is zero for every synchronous apply;
/// * per shard and layer, asynchronous applies carry consecutive versions and
///   synchronous iterations aggregate the expected number of distinct workers,
///   each tagged with the iteration index;
/// * asynchronous traces never drop.
pub fn validate_trace(trace: &EventTrace, check: AggregationCheck) -> ValidationReport {
    let protocol = if trace.events.iter().any(|e| e.iter.is_some()) {
        ProtocolKind::Sync
    } else {
        ProtocolKind::Async
    };
    let mut violations = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for (i, e) in trace.events.iter().enumerate() {
        if !e.time.is_finite() {
            violations.push(format!("event {i}: non-finite time"));
        } else if e.time < last {
            violations.push(format!("event {i}: time {} precedes {last}", e.time));
        } else {
            last = e.time;
        }
    }

    let matched = match_gradients(trace);
    violations.extend(matched.orphans.iter().cloned());
    if matched.pending_sends > 0 {
        violations.push(format!(
            "{} sent gradients were never applied or dropped",
            matched.pending_sends
        ));
    }

    let mut max_staleness = 0;
    for r in &matched.records {
        if r.send_time < r.read_time || r.resolved_time < r.send_time {
            violations.push(format!(
                "worker {} shard {}: events out of order (read {}, send {}, resolved {})",
                r.worker, r.shard, r.read_time, r.send_time, r.resolved_time
            ));
        }
        if r.resolution == Resolution::Applied {
            let s = r.staleness();
            max_staleness = max_staleness.max(s);
            if s < 0 {
                violations.push(format!(
                    "worker {} shard {}: negative staleness {s}",
                    r.worker, r.shard
                ));
            }
            if protocol == ProtocolKind::Sync {
                if s != 0 {
                    violations.push(format!(
                        "worker {} shard {} iter {:?}: sync gradient with staleness {s}",
                        r.worker, r.shard, r.iter
                    ));
                }
                if r.iter != Some(r.resolved_version) {
                    violations.push(format!(
                        "worker {} shard {}: gradient tagged {:?} applied at iteration {}",
                        r.worker, r.shard, r.iter, r.resolved_version
                    ));
                }
            }
        } else if protocol == ProtocolKind::Async {
            violations.push(format!(
                "worker {} shard {}: asynchronous gradient dropped",
                r.worker, r.shard
            ));
        } else if let Some(tag) = r.iter {
            if tag > r.resolved_version {
                violations.push(format!(
                    "worker {} shard {}: gradient from future iteration {tag} at {}",
                    r.worker, r.shard, r.resolved_version
                ));
            }
        }
    }

    // Per (shard, layer) apply sequences.
    let mut applies: BTreeMap<(usize, Option<usize>), Vec<(u64, usize)>> = BTreeMap::new();
    for e in trace.events.iter().filter(|e| e.kind == EventKind::Apply) {
        applies
            .entry((e.shard, e.layer))
            .or_default()
            .push((e.version, e.worker));
    }
    let mut iterations = 0;
    let mut aggregated = match check {
        AggregationCheck::Exactly(n) => Some(n),
        _ => None,
    };
    for ((shard, layer), seq) in &applies {
        match protocol {
            ProtocolKind::Async => {
                for (k, &(v, _)) in seq.iter().enumerate() {
                    if v != k as u64 {
                        violations.push(format!(
                            "shard {shard} layer {layer:?}: apply #{k} carries version {v}"
                        ));
                        break;
                    }
                }
                iterations = iterations.max(seq.len() as u64);
            }
            ProtocolKind::Sync => {
                let mut groups: BTreeMap<u64, BTreeSet<usize>> = BTreeMap::new();
                let mut prev = 0;
                for &(v, w) in seq {
                    if v < prev {
                        violations.push(format!(
                            "shard {shard} layer {layer:?}: version {v} applied after {prev}"
                        ));
                    }
                    prev = v;
                    if !groups.entry(v).or_default().insert(w) {
                        violations.push(format!(
                            "shard {shard} layer {layer:?}: worker {w} aggregated twice in iteration {v}"
                        ));
                    }
                }
                for (k, (&v, workers)) in groups.iter().enumerate() {
                    if v != k as u64 {
                        violations.push(format!(
                            "shard {shard} layer {layer:?}: iteration {k} missing (found {v})"
                        ));
                        break;
                    }
                    match (check, aggregated) {
                        (AggregationCheck::Any, _) => {}
                        (_, None) => aggregated = Some(workers.len()),
                        (_, Some(n)) if workers.len() != n => violations.push(format!(
                            "shard {shard} layer {layer:?} iteration {v}: aggregated {} gradients, expected {n}",
                            workers.len()
                        )),
                        _ => {}
                    }
                }
                iterations = iterations.max(groups.len() as u64);
            }
        }
    }

    ValidationReport {
        protocol,
        reads: trace.count(EventKind::Read),
        sends: trace.count(EventKind::Send),
        applies: trace.count(EventKind::Apply),
        drops: trace.count(EventKind::Drop),
        iterations,
        aggregated_per_iteration: aggregated,
        max_staleness,
        violations,
    }
}
