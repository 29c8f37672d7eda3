use std::collections::{BTreeMap, VecDeque};

use super::{EventKind, EventTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Applied,
    Dropped,
}

/// One gradient slice followed from its read through its send to the apply
/// or drop that consumed it.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientRecord {
    pub worker: usize,
    pub shard: usize,
    pub layer: Option<usize>,
    pub iter: Option<u64>,
    pub read_version: u64,
    pub read_time: f64,
    pub send_time: f64,
    pub resolved_time: f64,
    pub resolved_version: u64,
    pub resolution: Resolution,
}

impl GradientRecord {
    /// Updates applied to the shard between the read and this apply.
    pub fn staleness(&self) -> i64 {
        self.resolved_version as i64 - self.read_version as i64
    }
}

#[derive(Debug, Clone, Default)]
pub struct MatchResult {
    pub records: Vec<GradientRecord>,
    /// Reads whose gradient was never sent (in flight when the trace ended).
    pub pending_reads: usize,
    /// Sends never applied or dropped.
    pub pending_sends: usize,
    /// Events with no predecessor (send without read, apply/drop without send).
    pub orphans: Vec<String>,
}

struct Pending {
    version: u64,
    read_time: f64,
    send_time: f64,
    iter: Option<u64>,
}

/// Pairs events FIFO per `(worker, shard, layer)`: each read is consumed by
/// the next send, each send by the next apply or drop.
pub fn match_gradients(trace: &EventTrace) -> MatchResult {
    type Key = (usize, usize, Option<usize>);
    let mut reads: BTreeMap<Key, VecDeque<Pending>> = BTreeMap::new();
    let mut sends: BTreeMap<Key, VecDeque<Pending>> = BTreeMap::new();
    let mut out = MatchResult::default();
    for (i, e) in trace.events.iter().enumerate() {
        let key = (e.worker, e.shard, e.layer);
        match e.kind {
            EventKind::Read => reads.entry(key).or_default().push_back(Pending {
                version: e.version,
                read_time: e.time,
                send_time: f64::NAN,
                iter: e.iter,
            }),
            EventKind::Send => match reads.get_mut(&key).and_then(VecDeque::pop_front) {
                Some(mut p) => {
                    p.send_time = e.time;
                    if p.iter.is_none() {
                        p.iter = e.iter;
                    }
                    sends.entry(key).or_default().push_back(p);
                }
                None => out.orphans.push(format!(
                    "event {i}: send by worker {} (shard {}, layer {:?}) without a read",
                    e.worker, e.shard, e.layer
                )),
            },
            EventKind::Apply | EventKind::Drop => {
                match sends.get_mut(&key).and_then(VecDeque::pop_front) {
                    Some(p) => out.records.push(GradientRecord {
                        worker: e.worker,
                        shard: e.shard,
                        layer: e.layer,
                        iter: p.iter,
                        read_version: p.version,
                        read_time: p.read_time,
                        send_time: p.send_time,
                        resolved_time: e.time,
                        resolved_version: e.version,
                        resolution: if e.kind == EventKind::Apply {
                            Resolution::Applied
                        } else {
                            Resolution::Dropped
                        },
                    }),
                    None => out.orphans.push(format!(
                        "event {i}: {:?} for worker {} (shard {}, layer {:?}) without a send",
                        e.kind, e.worker, e.shard, e.layer
                    )),
                }
            }
        }
    }
    out.pending_reads = reads.values().map(VecDeque::len).sum();
    out.pending_sends = sends.values().map(VecDeque::len).sum();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TraceEvent;

    fn ev(time: f64, kind: EventKind, worker: usize, version: u64) -> TraceEvent {
        TraceEvent { time, kind, worker, shard: 0, iter: None, layer: Some(0), version }
    }

    #[test]
    fn read_at_five_applied_at_nine_is_four_stale() {
        let trace = EventTrace {
            events: vec![
                ev(0.0, EventKind::Read, 0, 5),
                ev(1.0, EventKind::Send, 0, 5),
                ev(1.0, EventKind::Apply, 0, 9),
            ],
        };
        let m = match_gradients(&trace);
        assert_eq!(m.records.len(), 1);
        assert_eq!(m.records[0].staleness(), 4);
        assert!(m.orphans.is_empty());
    }

    #[test]
    fn orphans_and_pending_are_reported() {
        let trace = EventTrace {
            events: vec![
                ev(0.0, EventKind::Apply, 0, 0),
                ev(0.5, EventKind::Read, 1, 0),
                ev(0.6, EventKind::Read, 2, 0),
                ev(0.7, EventKind::Send, 2, 0),
            ],
        };
        let m = match_gradients(&trace);
        assert_eq!(m.orphans.len(), 1);
        assert_eq!(m.pending_reads, 1);
        assert_eq!(m.pending_sends, 1);
    }
}
