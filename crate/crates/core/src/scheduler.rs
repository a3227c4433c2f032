//! Hierarchical scheduling: macro routing bounds and micro tool parallelism.
//!
//! The planner model decides how many subagents and how many parallel tool
//! calls a step deserves; this module only enforces the bounds and runs the
//! work concurrently with results joined in declaration order.

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::thread;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::tools::{ToolContext, ToolErrorKind, ToolFailure, ToolOutcome, ToolRegistry};

pub const DEFAULT_ENSEMBLE_CAP: usize = 8;
pub const MAX_BATCH_CALLS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtask {
    pub subagent_id: String,
    pub prompt: String,
    /// `None` allows every registered tool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_allowlist: Option<Vec<String>>,
}

impl Subtask {
    pub fn allows(&self, tool: &str) -> bool {
        self.tool_allowlist.as_ref().is_none_or(|list| list.iter().any(|t| t == tool))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub subtasks: Vec<Subtask>,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub call_index: usize,
    pub tool_name: String,
    pub arguments: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolBatch {
    pub calls: Vec<ToolCall>,
    pub issued_by: String,
    pub round: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum ScheduleError {
    #[error("ensemble of {size} exceeds cap {cap}")]
    EnsembleTooLarge { size: usize, cap: usize },
    #[error("routing decision has no subtasks")]
    EmptyEnsemble,
    #[error("duplicate subagent id `{id}`")]
    DuplicateSubagentId { id: String },
    #[error("batch of {size} calls exceeds cap {cap}")]
    BatchTooLarge { size: usize, cap: usize },
    #[error("batch has no calls")]
    EmptyBatch,
    #[error("call indices must be 0..{len} without gaps")]
    MalformedIndices { len: usize },
}

pub fn validate_routing(decision: RoutingDecision, cap: usize) -> Result<RoutingDecision, ScheduleError> {
    let size = decision.subtasks.len();
    if size == 0 {
        return Err(ScheduleError::EmptyEnsemble);
    }
    if size > cap {
        return Err(ScheduleError::EnsembleTooLarge { size, cap });
    }
    let mut seen = BTreeSet::new();
    for s in &decision.subtasks {
        if !seen.insert(s.subagent_id.as_str()) {
            return Err(ScheduleError::DuplicateSubagentId { id: s.subagent_id.clone() });
        }
    }
    Ok(decision)
}

pub fn validate_batch(batch: ToolBatch) -> Result<ToolBatch, ScheduleError> {
    validate_batch_with_cap(batch, MAX_BATCH_CALLS)
}

pub fn validate_batch_with_cap(batch: ToolBatch, cap: usize) -> Result<ToolBatch, ScheduleError> {
    let size = batch.calls.len();
    if size == 0 {
        return Err(ScheduleError::EmptyBatch);
    }
    if size > cap {
        return Err(ScheduleError::BatchTooLarge { size, cap });
    }
    let mut indices: Vec<usize> = batch.calls.iter().map(|c| c.call_index).collect();
    indices.sort_unstable();
    if indices.iter().enumerate().any(|(i, &idx)| i != idx) {
        return Err(ScheduleError::MalformedIndices { len: size });
    }
    Ok(batch)
}

#[derive(Debug, Clone)]
pub struct DispatchOptions<'a> {
    pub timeout_ms: u64,
    pub allowlist: Option<&'a [String]>,
    pub main_round: u32,
    pub seed: u64,
}

fn run_one(call: &ToolCall, registry: &ToolRegistry, ctx: &ToolContext, opts: &DispatchOptions<'_>) -> ToolOutcome {
    let fail = |kind, message: String, latency_ms| ToolOutcome {
        call_index: call.call_index,
        tool_name: call.tool_name.clone(),
        result: Err(ToolFailure::new(kind, message)),
        latency_ms,
    };
    if let Some(list) = opts.allowlist {
        if !list.iter().any(|t| t == &call.tool_name) {
            return fail(
                ToolErrorKind::NotAllowed,
                format!("tool `{}` is not in this subagent's allowlist", call.tool_name),
                0,
            );
        }
    }
    let Some(tool) = registry.resolve(&call.tool_name) else {
        return fail(ToolErrorKind::UnknownTool, format!("no tool named `{}`", call.tool_name), 0);
    };
    let response = match panic::catch_unwind(AssertUnwindSafe(|| tool.call(call, ctx))) {
        Ok(r) => r,
        Err(_) => return fail(ToolErrorKind::Internal, "tool panicked".into(), 0),
    };
    if response.latency_ms > opts.timeout_ms {
        return fail(ToolErrorKind::Timeout, format!("no response within {} ms", opts.timeout_ms), opts.timeout_ms);
    }
    ToolOutcome {
        call_index: call.call_index,
        tool_name: call.tool_name.clone(),
        result: response.result,
        latency_ms: response.latency_ms,
    }
}

/// Run every call of a validated batch concurrently.
///
/// Returns exactly one outcome per call, ordered by `call_index`. A failing
/// or panicking call yields an error outcome and never aborts its siblings.
pub fn dispatch_parallel(batch: &ToolBatch, registry: &ToolRegistry, opts: &DispatchOptions<'_>) -> Vec<ToolOutcome> {
    let mut calls: Vec<&ToolCall> = batch.calls.iter().collect();
    calls.sort_by_key(|c| c.call_index);
    let ctx = ToolContext {
        subagent: batch.issued_by.clone(),
        main_round: opts.main_round,
        round: batch.round,
        seed: opts.seed,
    };
    if calls.len() == 1 {
        return vec![run_one(calls[0], registry, &ctx, opts)];
    }
    thread::scope(|scope| {
        let handles: Vec<_> = calls
            .iter()
            .map(|call| {
                let ctx = &ctx;
                scope.spawn(move || run_one(call, registry, ctx, opts))
            })
            .collect();
        handles
            .into_iter()
            .zip(&calls)
            .map(|(h, call)| {
                h.join().unwrap_or_else(|_| ToolOutcome {
                    call_index: call.call_index,
                    tool_name: call.tool_name.clone(),
                    result: Err(ToolFailure::new(ToolErrorKind::Internal, "dispatch thread panicked")),
                    latency_ms: 0,
                })
            })
            .collect()
    })
}

/// Run one worker per subtask concurrently and join in declaration order.
///
/// Worker-level failures are expected to be folded into the worker's own
/// output; an `Err` here is a harness failure and the first one in
/// declaration order is returned.
pub fn run_ensemble<T, E, F>(decision: &RoutingDecision, worker: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize, &Subtask) -> Result<T, E> + Sync,
{
    if decision.subtasks.len() == 1 {
        return Ok(vec![worker(0, &decision.subtasks[0])?]);
    }
    let results: Vec<Result<T, E>> = thread::scope(|scope| {
        let handles: Vec<_> = decision
            .subtasks
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let worker = &worker;
                scope.spawn(move || worker(i, s))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|p| panic::resume_unwind(p))).collect()
    });
    results.into_iter().collect()
}

/// Apply `f` to every item, at most `bound` at a time, in consecutive
/// batches. Output order matches input order. Stops after the first batch in
/// which `stop` holds for some output.
pub fn map_in_batches<I, O, F, S>(items: &[I], bound: usize, f: F, stop: S) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(usize, &I) -> O + Sync,
    S: Fn(&O) -> bool,
{
    let bound = bound.max(1);
    let mut out = Vec::with_capacity(items.len());
    for (chunk_no, chunk) in items.chunks(bound).enumerate() {
        let base = chunk_no * bound;
        let batch: Vec<O> = thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .enumerate()
                .map(|(j, item)| {
                    let f = &f;
                    scope.spawn(move || f(base + j, item))
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap_or_else(|p| panic::resume_unwind(p))).collect()
        });
        let done = batch.iter().any(&stop);
        out.extend(batch);
        if done {
            break;
        }
    }
    out
}
