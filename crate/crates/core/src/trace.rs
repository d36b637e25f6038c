//! Line-delimited JSON run traces.
//!
//! One event per line; the first line is always `run_meta`. Readers accept a
//! truncated final line (a crash mid-write) and drop it.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{HistoryError, TraceError};
use crate::history::History;
use crate::model::{Hint, RunConfig, ScoredCandidate};

pub const TRACE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub format_version: u32,
    /// Full config as validated, kept as raw JSON so old traces stay readable.
    pub config: Value,
    pub optimizer_model: String,
    pub hint_model: String,
    pub reward: String,
}

impl RunMeta {
    pub fn config(&self) -> Result<RunConfig, crate::error::ConfigError> {
        crate::model::validate_config(&self.config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    RunMeta(RunMeta),
    Candidate(ScoredCandidate),
    Hint(Hint),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub run_id: String,
    #[serde(flatten)]
    pub body: EventBody,
    pub prompts_generated_cumulative: u64,
    pub wall_clock_ms_cumulative: u64,
}

impl TraceEvent {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trace events serialize")
    }

    pub fn candidate(&self) -> Option<&ScoredCandidate> {
        match &self.body {
            EventBody::Candidate(c) => Some(c),
            _ => None,
        }
    }

    pub fn hint(&self) -> Option<&Hint> {
        match &self.body {
            EventBody::Hint(h) => Some(h),
            _ => None,
        }
    }
}

/// Destination for trace events.
pub trait TraceSink {
    fn emit(&mut self, event: &TraceEvent) -> Result<(), TraceError>;
}

#[derive(Debug, Default)]
pub struct MemorySink {
    pub events: Vec<TraceEvent>,
}

impl TraceSink for MemorySink {
    fn emit(&mut self, event: &TraceEvent) -> Result<(), TraceError> {
        self.events.push(event.clone());
        Ok(())
    }
}

impl MemorySink {
    pub fn to_jsonl(&self) -> String {
        self.events.iter().map(|e| e.to_line() + "\n").collect()
    }
}

/// Appends events to a file, flushing after every line.
pub struct FileSink {
    out: BufWriter<File>,
}

impl FileSink {
    /// Create (truncating) a trace file.
    pub fn create(path: &Path) -> Result<Self, TraceError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        Ok(Self { out: BufWriter::new(file) })
    }
}

impl TraceSink for FileSink {
    fn emit(&mut self, event: &TraceEvent) -> Result<(), TraceError> {
        self.out.write_all(event.to_line().as_bytes())?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

/// A parsed trace: metadata plus the events that followed it.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub run_id: String,
    pub meta: RunMeta,
    pub events: Vec<TraceEvent>,
    /// Set when a truncated final line was dropped.
    pub truncated: bool,
}

impl Trace {
    pub fn candidates(&self) -> impl Iterator<Item = &ScoredCandidate> {
        self.events.iter().filter_map(TraceEvent::candidate)
    }

    pub fn hints(&self) -> impl Iterator<Item = &Hint> {
        self.events.iter().filter_map(TraceEvent::hint)
    }

    /// Config embedded in `run_meta`.
    pub fn config(&self) -> Result<RunConfig, TraceError> {
        self.meta.config().map_err(|e| TraceError::Parse {
            line: 1,
            message: e.to_string(),
        })
    }

    /// Rebuild the history recorded so far.
    pub fn replay_history(&self) -> Result<History, HistoryError> {
        let seed = self.meta.config.get("rng_seed").and_then(Value::as_u64).unwrap_or(0);
        let mut history = History::new(seed);
        for c in self.candidates() {
            history.append(c.clone())?;
        }
        Ok(history)
    }

    /// True once a candidate from the final configured iteration is recorded.
    pub fn is_complete(&self) -> bool {
        let Ok(config) = self.config() else { return false };
        self.candidates().any(|c| c.iteration == config.iterations)
    }
}

pub fn parse_trace(text: &str) -> Result<Trace, TraceError> {
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    let mut events = Vec::with_capacity(lines.len());
    let mut truncated = false;
    for (i, raw) in lines.iter().enumerate() {
        let is_last = i + 1 == lines.len();
        let line = raw.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TraceEvent>(line) {
            Ok(ev) => events.push(ev),
            // An unterminated final line is a partial write.
            Err(_) if is_last && !raw.ends_with('\n') => truncated = true,
            Err(e) => {
                return Err(TraceError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    let mut iter = events.into_iter();
    let first = iter.next().ok_or(TraceError::MissingMeta)?;
    let EventBody::RunMeta(meta) = first.body else {
        return Err(TraceError::MissingMeta);
    };
    let events: Vec<TraceEvent> = iter.collect();
    if events.iter().any(|e| matches!(e.body, EventBody::RunMeta(_))) {
        return Err(TraceError::MissingMeta);
    }
    Ok(Trace {
        run_id: first.run_id,
        meta,
        events,
        truncated,
    })
}

pub fn read_trace(path: &Path) -> Result<Trace, TraceError> {
    parse_trace(&std::fs::read_to_string(path)?)
}

/// Blank out wall-clock fields so two traces can be compared byte-for-byte.
pub fn strip_wall_clock(jsonl: &str) -> String {
    jsonl
        .lines()
        .map(|line| match serde_json::from_str::<TraceEvent>(line) {
            Ok(mut ev) => {
                ev.wall_clock_ms_cumulative = 0;
                ev.to_line()
            }
            Err(_) => line.to_string(),
        })
        .collect::<Vec<_>>()
        .join("\n")
}
