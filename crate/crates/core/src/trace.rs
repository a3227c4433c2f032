//! Execution traces.
//!
//! A trace is a totally ordered list of structured events. Concurrent
//! subagents record into private [`EventBuffer`]s which the main loop splices
//! into the [`Trace`] at the join point, in declaration order, so the final
//! event order never depends on thread scheduling.
//!
//! On disk a trace is JSONL with one `{seq, wall_offset_ms, kind, payload}`
//! object per line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    RunStart,
    MemoryQuery,
    MemoryRead,
    ModelCall,
    Routing,
    RoutingRejected,
    SubagentStart,
    ToolBatch,
    BatchRejected,
    ToolResult,
    Truncation,
    RoundSummary,
    Compression,
    Note,
    Verification,
    SubagentSummary,
    Integrate,
    Aggregate,
    SkillExtraction,
    MemoryWriteGate,
    RunEnd,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::RunStart => "run_start",
            EventKind::MemoryQuery => "memory_query",
            EventKind::MemoryRead => "memory_read",
            EventKind::ModelCall => "model_call",
            EventKind::Routing => "routing",
            EventKind::RoutingRejected => "routing_rejected",
            EventKind::SubagentStart => "subagent_start",
            EventKind::ToolBatch => "tool_batch",
            EventKind::BatchRejected => "batch_rejected",
            EventKind::ToolResult => "tool_result",
            EventKind::Truncation => "truncation",
            EventKind::RoundSummary => "round_summary",
            EventKind::Compression => "compression",
            EventKind::Note => "note",
            EventKind::Verification => "verification",
            EventKind::SubagentSummary => "subagent_summary",
            EventKind::Integrate => "integrate",
            EventKind::Aggregate => "aggregate",
            EventKind::SkillExtraction => "skill_extraction",
            EventKind::MemoryWriteGate => "memory_write_gate",
            EventKind::RunEnd => "run_end",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub wall_offset_ms: u64,
    pub kind: EventKind,
    pub payload: Value,
}

/// Events recorded by one execution context before they receive a sequence
/// number.
#[derive(Debug, Clone, Default)]
pub struct EventBuffer {
    events: Vec<(u64, EventKind, Value)>,
}

impl EventBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, wall_offset_ms: u64, kind: EventKind, payload: Value) {
        self.events.push((wall_offset_ms, kind, payload));
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&u64, &EventKind, &Value)> {
        self.events.iter().map(|(t, k, p)| (t, k, p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub trace_id: String,
    pub seed: u64,
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace io: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("trace line {line}: expected seq {expected}, found {found}")]
    Sequence { line: usize, expected: u64, found: u64 },
    #[error("trace is empty or lacks a run_start header")]
    MissingHeader,
}

impl Trace {
    pub fn new(trace_id: impl Into<String>, seed: u64) -> Self {
        Self { trace_id: trace_id.into(), seed, events: Vec::new() }
    }

    pub fn record(&mut self, wall_offset_ms: u64, kind: EventKind, payload: Value) -> u64 {
        let seq = self.events.len() as u64;
        self.events.push(TraceEvent { seq, wall_offset_ms, kind, payload });
        seq
    }

    /// Splice a buffered context's events onto the end of the trace.
    pub fn absorb(&mut self, buffer: EventBuffer) {
        for (t, kind, payload) in buffer.events {
            self.record(t, kind, payload);
        }
    }

    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events_of(kind).count()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), TraceError> {
        for event in &self.events {
            serde_json::to_writer(&mut out, event).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    /// Parse JSONL. The first event must be `run_start` carrying
    /// `trace_id` and `seed`.
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, TraceError> {
        let mut events = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let event: TraceEvent =
                serde_json::from_str(&line).map_err(|source| TraceError::Parse { line: i + 1, source })?;
            let expected = events.len() as u64;
            if event.seq != expected {
                return Err(TraceError::Sequence { line: i + 1, expected, found: event.seq });
            }
            events.push(event);
        }
        let header = events.first().filter(|e| e.kind == EventKind::RunStart).ok_or(TraceError::MissingHeader)?;
        let trace_id = header.payload["trace_id"].as_str().ok_or(TraceError::MissingHeader)?.to_string();
        let seed = header.payload["seed"].as_u64().ok_or(TraceError::MissingHeader)?;
        Ok(Self { trace_id, seed, events })
    }
}
