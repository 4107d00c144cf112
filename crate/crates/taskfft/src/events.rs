//! Shared append-only event log: one record per scheduler or redistribution
//! event, timestamped against a common monotonic epoch.

use std::io::Write;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::Serialize;

/// One trace record. Matches the JSON-lines schema emitted by the CLI.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Event {
    /// Seconds since the log's epoch (monotonic clock).
    pub t: f64,
    pub rank: usize,
    pub worker: usize,
    pub event: String,
    pub task: Option<usize>,
    pub peer: Option<usize>,
    pub phase: Option<String>,
    pub bytes: Option<u64>,
}

#[derive(Clone)]
pub struct EventLog {
    inner: Arc<EventLogInner>,
}

struct EventLogInner {
    epoch: Instant,
    events: Mutex<Vec<Event>>,
}

impl Default for EventLog {
    fn default() -> Self {
        Self::new()
    }
}

impl EventLog {
    pub fn new() -> Self {
        EventLog {
            inner: Arc::new(EventLogInner { epoch: Instant::now(), events: Mutex::new(Vec::new()) }),
        }
    }

    pub fn now(&self) -> f64 {
        self.inner.epoch.elapsed().as_secs_f64()
    }

    pub fn record(
        &self,
        rank: usize,
        worker: usize,
        event: &str,
        task: Option<usize>,
        peer: Option<usize>,
        phase: Option<&str>,
        bytes: Option<u64>,
    ) {
        let ev = Event {
            t: self.now(),
            rank,
            worker,
            event: event.to_string(),
            task,
            peer,
            phase: phase.map(str::to_string),
            bytes,
        };
        self.inner.events.lock().unwrap().push(ev);
    }

    pub fn snapshot(&self) -> Vec<Event> {
        self.inner.events.lock().unwrap().clone()
    }

    pub fn clear(&self) {
        self.inner.events.lock().unwrap().clear();
    }

    /// Writes the log as JSON lines.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for ev in self.snapshot() {
            serde_json::to_writer(&mut w, &ev)?;
            writeln!(w)?;
        }
        Ok(())
    }
}
