//! Append-only event log, serialised as JSON Lines.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::Micros;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub t_us: Micros,
    pub source: String,
    pub kind: String,
    pub payload: Map<String, Value>,
}

impl EventRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event records always serialise")
    }
}

/// An event before it has been sequenced.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingEvent {
    pub t_us: Micros,
    pub source: &'static str,
    pub kind: &'static str,
    pub payload: Map<String, Value>,
}

impl PendingEvent {
    pub fn new(t_us: Micros, source: &'static str, kind: &'static str) -> Self {
        Self { t_us, source, kind, payload: Map::new() }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.payload.insert(key.to_string(), value.into());
        self
    }
}

#[derive(Debug, Default, Clone)]
pub struct EventLog {
    records: Vec<EventRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, event: PendingEvent) -> &EventRecord {
        let seq = self.records.len() as u64;
        self.records.push(EventRecord {
            seq,
            t_us: event.t_us,
            source: event.source.to_string(),
            kind: event.kind.to_string(),
            payload: event.payload,
        });
        self.records.last().expect("just pushed")
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for r in &self.records {
            writeln!(out, "{}", r.to_json_line())?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&r.to_json_line());
            s.push('\n');
        }
        s
    }

    pub fn filter<'a>(&'a self, source: &'a str, kind: &'a str) -> impl Iterator<Item = &'a EventRecord> + 'a {
        self.records.iter().filter(move |r| r.source == source && r.kind == kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_field_set() {
        let mut log = EventLog::new();
        log.push(PendingEvent::new(5, "safety", "fault").with("cause", "estop"));
        log.push(PendingEvent::new(5, "sequencer", "phase"));
        let text = log.to_jsonl();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], r#"{"seq":0,"t_us":5,"source":"safety","kind":"fault","payload":{"cause":"estop"}}"#);
        let v: Value = serde_json::from_str(lines[1]).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 5);
        assert_eq!(log.records()[1].seq, 1);
    }
}
