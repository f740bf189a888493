//! Timestamped run records, written as newline-delimited JSON.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::time::LogicalTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Dispatch,
    Request,
    Pace,
    PumpCmd,
    Interrupt,
    RoundTiming,
    DeadlineMiss,
    ClientFailure,
}

impl EventKind {
    /// Kinds that describe model behaviour rather than host timing.
    pub fn is_behavioural(self) -> bool {
        matches!(
            self,
            EventKind::Dispatch | EventKind::Request | EventKind::Pace | EventKind::PumpCmd | EventKind::Interrupt
        )
    }

    pub fn from_note(kind: &str) -> Option<EventKind> {
        serde_json::from_value(Json::String(kind.to_string())).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: LogicalTime,
    pub wall_ms: f64,
    pub kind: EventKind,
    pub detail: Json,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventLog {
    records: Vec<Record>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, r: Record) {
        self.records.push(r);
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn since(&self, n: usize) -> &[Record] {
        &self.records[n.min(self.records.len())..]
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    pub fn extend(&mut self, records: impl IntoIterator<Item = Record>) {
        self.records.extend(records);
    }

    /// `(t, kind, detail)` for behavioural records, the comparison basis
    /// between logical and physical runs.
    pub fn projection(&self) -> Vec<(LogicalTime, EventKind, Json)> {
        self.records
            .iter()
            .filter(|r| r.kind.is_behavioural())
            .map(|r| (r.t, r.kind, r.detail.clone()))
            .collect()
    }

    /// Records out of order in logical or wall time.
    pub fn ordering_violations(&self) -> usize {
        self.records
            .windows(2)
            .filter(|w| w[1].t < w[0].t || w[1].wall_ms < w[0].wall_ms)
            .count()
    }

    pub fn write_ndjson(&self, mut w: impl Write) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_ndjson(r: impl BufRead) -> io::Result<EventLog> {
        let mut log = EventLog::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            log.push(serde_json::from_str(&line).map_err(io::Error::other)?);
        }
        Ok(log)
    }
}

impl FromIterator<Record> for EventLog {
    fn from_iter<I: IntoIterator<Item = Record>>(iter: I) -> Self {
        EventLog {
            records: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn rec(t: u32, kind: EventKind) -> Record {
        Record {
            t: LogicalTime::from_int(t),
            wall_ms: f64::from(t) * 10.0,
            kind,
            detail: json!({ "n": t }),
        }
    }

    #[test]
    fn ndjson_round_trip() {
        let log: EventLog = [rec(0, EventKind::Dispatch), rec(3, EventKind::PumpCmd)].into_iter().collect();
        let text = log.to_ndjson();
        assert_eq!(text.lines().count(), 2);
        assert!(text.contains("\"kind\":\"pump-cmd\""));
        let back = EventLog::read_ndjson(text.as_bytes()).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn projection_drops_timing() {
        let log: EventLog = [rec(0, EventKind::Dispatch), rec(1, EventKind::RoundTiming), rec(2, EventKind::Pace)]
            .into_iter()
            .collect();
        let kinds: Vec<_> = log.projection().into_iter().map(|p| p.1).collect();
        assert_eq!(kinds, vec![EventKind::Dispatch, EventKind::Pace]);
    }

    #[test]
    fn note_kinds() {
        assert_eq!(EventKind::from_note("dispatch"), Some(EventKind::Dispatch));
        assert_eq!(EventKind::from_note("stimulus"), None);
    }
}
