//! Re-execute a recorded run against its own recorded replies and tool
//! outcomes, and compare the regenerated trace event by event.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::config::KernelConfig;
use crate::memory::{MemoryEntry, MemoryError, MemoryStore, SkillKind};
use crate::model::{BackendError, ModelBackend, ModelRequest, Role};
use crate::runtime::{run_task, Task};
use crate::scheduler::ToolCall;
use crate::tools::{Tool, ToolContext, ToolErrorKind, ToolFailure, ToolRegistry, ToolResponse};
use crate::trace::{EventKind, Trace, TraceEvent};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("trace has no run_start event")]
    MissingHeader,
    #[error("run_start field `{field}` is unreadable: {detail}")]
    BadHeader { field: &'static str, detail: String },
    #[error("event {index}: {detail}")]
    BadEvent { index: usize, detail: String },
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

type CallKey = (Role, Option<String>, u32, u32);

/// Serves recorded model replies. Calls sharing a key are served in their
/// recorded order.
#[derive(Debug, Default)]
pub struct ReplayBackend {
    replies: BTreeMap<CallKey, Vec<Result<String, BackendError>>>,
    cursors: Mutex<BTreeMap<CallKey, usize>>,
}

fn field<T: for<'de> Deserialize<'de>>(payload: &Value, name: &str, index: usize) -> Result<T, ReplayError> {
    serde_json::from_value(payload.get(name).cloned().unwrap_or(Value::Null))
        .map_err(|e| ReplayError::BadEvent { index, detail: format!("field `{name}`: {e}") })
}

impl ReplayBackend {
    pub fn from_trace(trace: &Trace) -> Result<Self, ReplayError> {
        let mut replies: BTreeMap<CallKey, Vec<_>> = BTreeMap::new();
        for (i, e) in trace.events.iter().enumerate() {
            if e.kind != EventKind::ModelCall {
                continue;
            }
            let p = &e.payload;
            let key =
                (field(p, "role", i)?, field(p, "subagent", i)?, field(p, "main_round", i)?, field(p, "round", i)?);
            let reply = match p.get("reply").and_then(Value::as_str) {
                Some(text) => Ok(text.to_string()),
                None => Err(field::<BackendError>(p, "error", i)?),
            };
            replies.entry(key).or_default().push(reply);
        }
        Ok(Self { replies, cursors: Mutex::new(BTreeMap::new()) })
    }
}

impl ModelBackend for ReplayBackend {
    fn complete(&self, req: &ModelRequest) -> Result<String, BackendError> {
        let key = (req.role, req.subagent.clone(), req.main_round, req.round);
        let mut cursors = self.cursors.lock().expect("replay cursor lock poisoned");
        let n = cursors.entry(key.clone()).or_insert(0);
        let reply = self.replies.get(&key).and_then(|v| v.get(*n)).cloned();
        *n += 1;
        reply.unwrap_or_else(|| {
            Err(BackendError::NoScript(format!(
                "no recorded {} reply for subagent {:?}, main round {}, round {}",
                req.role, req.subagent, req.main_round, req.round
            )))
        })
    }
}

type ToolKey = (String, u32, u32, usize);

/// Serves recorded tool outcomes by `(subagent, main round, round, call index)`.
#[derive(Debug, Default)]
struct ReplayTools {
    outcomes: BTreeMap<ToolKey, ToolResponse>,
}

impl Tool for Arc<ReplayTools> {
    fn call(&self, call: &ToolCall, ctx: &ToolContext) -> ToolResponse {
        let key = (ctx.subagent.clone(), ctx.main_round, ctx.round, call.call_index);
        self.outcomes.get(&key).cloned().unwrap_or_else(|| {
            ToolResponse::err(ToolErrorKind::Internal, format!("no recorded outcome for {key:?}"), 0)
        })
    }
}

/// Registry whose tools answer from the trace. Names whose every recorded
/// outcome was `unknown_tool` stay unregistered so dispatch reproduces that
/// error; a registered name replays its recorded failures verbatim.
pub fn replay_registry(trace: &Trace) -> Result<ToolRegistry, ReplayError> {
    let mut tools = ReplayTools::default();
    let mut names = BTreeMap::new();
    for (i, e) in trace.events.iter().enumerate() {
        if e.kind != EventKind::ToolResult {
            continue;
        }
        let p = &e.payload;
        let name: String = field(p, "tool", i)?;
        let key =
            (field(p, "subagent", i)?, field(p, "main_round", i)?, field(p, "round", i)?, field(p, "call_index", i)?);
        let latency_ms: u64 = field(p, "latency_ms", i)?;
        let response = match p.get("output").and_then(Value::as_str) {
            Some(out) => ToolResponse::ok(out, latency_ms),
            None => ToolResponse { result: Err(field::<ToolFailure>(p, "error", i)?), latency_ms },
        };
        let unknown = matches!(&response.result, Err(f) if f.kind == ToolErrorKind::UnknownTool);
        *names.entry(name).or_insert(false) |= !unknown;
        tools.outcomes.insert(key, response);
    }
    let tools = Arc::new(tools);
    let mut reg = ToolRegistry::new();
    for (name, known) in names {
        if known {
            reg.register(name, tools.clone());
        }
    }
    Ok(reg)
}

#[derive(Debug, Deserialize)]
struct SnapshotEntry {
    entry_id: String,
    kind: SkillKind,
    skill_text: String,
    source_trace: String,
    task_digest: String,
    confidence: f64,
    created_at: u64,
}

/// Inputs recovered from the `run_start` header.
#[derive(Debug)]
pub struct RecordedRun {
    pub task: Task,
    pub config: KernelConfig,
    pub memory: MemoryStore,
}

pub fn recorded_run(trace: &Trace) -> Result<RecordedRun, ReplayError> {
    let start = trace.events.iter().find(|e| e.kind == EventKind::RunStart).ok_or(ReplayError::MissingHeader)?;
    let bad = |field: &'static str| move |e: serde_json::Error| ReplayError::BadHeader { field, detail: e.to_string() };
    let p = &start.payload;
    let task: Task = serde_json::from_value(p["task"].clone()).map_err(bad("task"))?;
    let config: KernelConfig = serde_json::from_value(p["config"].clone()).map_err(bad("config"))?;
    let snapshot: Vec<SnapshotEntry> = serde_json::from_value(p["memory"].clone()).map_err(bad("memory"))?;
    let memory = MemoryStore::in_memory(crate::memory::MemoryConfig { store_path: None, ..config.memory.clone() });
    for s in snapshot {
        let entry: MemoryEntry = memory.make_entry(
            s.entry_id,
            s.kind,
            &s.skill_text,
            &s.source_trace,
            &s.task_digest,
            s.confidence,
            s.created_at,
        )?;
        memory.insert_unchecked(entry)?;
    }
    Ok(RecordedRun { task, config, memory })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub index: usize,
    pub expected: Option<String>,
    pub actual: Option<String>,
}

#[derive(Debug)]
pub struct ReplayReport {
    pub events: usize,
    pub divergence: Option<Divergence>,
    pub regenerated: Trace,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.divergence.is_none()
    }
}

fn line(e: &TraceEvent) -> String {
    serde_json::to_string(e).expect("event serializes")
}

/// First index at which the two event lists differ, if any.
pub fn first_divergence(expected: &[TraceEvent], actual: &[TraceEvent]) -> Option<Divergence> {
    let n = expected.len().max(actual.len());
    (0..n).find_map(|i| {
        let a = expected.get(i).map(line);
        let b = actual.get(i).map(line);
        (a != b).then_some(Divergence { index: i, expected: a, actual: b })
    })
}

pub fn replay(trace: &Trace) -> Result<ReplayReport, ReplayError> {
    let run = recorded_run(trace)?;
    let backend = ReplayBackend::from_trace(trace)?;
    let registry = replay_registry(trace)?;
    let regenerated = match run_task(&run.task, &run.config, &backend, &registry, &run.memory) {
        Ok(out) => out.trace,
        Err(f) => f.trace,
    };
    Ok(ReplayReport {
        events: trace.events.len(),
        divergence: first_divergence(&trace.events, &regenerated.events),
        regenerated,
    })
}
