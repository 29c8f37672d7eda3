//! Protocol event traces: the JSONL record format shared by the simulator and
//! the threaded runtime, gradient matching, and the post-hoc validator.

mod matching;
mod validate;

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use matching::{match_gradients, GradientRecord, MatchResult, Resolution};
pub use validate::{validate_trace, AggregationCheck, ProtocolKind, ValidationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Read,
    Send,
    Apply,
    Drop,
}

/// One protocol event. `version` is the shard's update counter: the value
/// observed by a read, the read version a gradient was computed against for a
/// send, the counter before the update for an apply, and the shard's current
/// counter for a drop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: f64,
    pub kind: EventKind,
    pub worker: usize,
    pub shard: usize,
    pub iter: Option<u64>,
    pub layer: Option<usize>,
    pub version: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventTrace {
    pub events: Vec<TraceEvent>,
}

impl EventTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn push(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn write_jsonl<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = BufWriter::new(writer);
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl<R: Read>(reader: R) -> Result<Self> {
        let mut events = Vec::new();
        for (n, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let event: TraceEvent = serde_json::from_str(&line)
                .map_err(|e| Error::Trace(format!("line {}: {e}", n + 1)))?;
            events.push(event);
        }
        Ok(Self { events })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_jsonl(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_jsonl(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_record_shape() {
        let mut t = EventTrace::new();
        t.push(TraceEvent {
            time: 1.5,
            kind: EventKind::Read,
            worker: 3,
            shard: 0,
            iter: None,
            layer: Some(2),
            version: 7,
        });
        t.push(TraceEvent {
            time: 2.0,
            kind: EventKind::Drop,
            worker: 1,
            shard: 1,
            iter: Some(4),
            layer: None,
            version: 5,
        });
        let text = t.to_jsonl();
        assert_eq!(
            text,
            "{\"time\":1.5,\"kind\":\"read\",\"worker\":3,\"shard\":0,\"iter\":null,\"layer\":2,\"version\":7}\n\
             {\"time\":2.0,\"kind\":\"drop\",\"worker\":1,\"shard\":1,\"iter\":4,\"layer\":null,\"version\":5}\n"
        );
        assert_eq!(EventTrace::read_jsonl(text.as_bytes()).unwrap(), t);
    }

    #[test]
    fn malformed_line_reports_position() {
        let err = EventTrace::read_jsonl("{\"time\":1}\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }
}
