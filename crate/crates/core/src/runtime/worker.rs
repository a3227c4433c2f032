//! The subagent execution loop.

use std::cell::RefCell;

use serde_json::{json, Value};

use super::record::{text_digest, CallOutcome, EventSink, Recorder};
use super::{KernelError, SubagentStatus, SubagentSummary};
use crate::config::KernelConfig;
use crate::ledger::{head_tail, ContextLedger, RoundClosure, SummarizerUnavailable, SummaryRequest};
use crate::model::{
    ActDirective, BackendError, GenerationOptions, Message, MessageRole, ModelBackend, ModelRequest, ReplyPayload,
    Role, Verdict, VerificationOutcome,
};
use crate::scheduler::{dispatch_parallel, validate_batch_with_cap, DispatchOptions, Subtask, ToolBatch};
use crate::tools::{ToolOutcome, ToolRegistry};
use crate::trace::{EventBuffer, EventKind};

/// Everything a subagent shares with its siblings.
#[derive(Clone, Copy)]
pub struct WorkerEnv<'a> {
    pub model: &'a dyn ModelBackend,
    pub tools: &'a ToolRegistry,
    pub config: &'a KernelConfig,
    pub main_round: u32,
    pub max_rounds: u32,
    pub seed: u64,
    pub options: GenerationOptions,
}

impl WorkerEnv<'_> {
    fn request(&self, role: Role, round: u32, subagent: &str, messages: Vec<Message>) -> ModelRequest {
        ModelRequest {
            role,
            main_round: self.main_round,
            round,
            subagent: Some(subagent.to_string()),
            seed: self.seed,
            messages,
            options: self.options,
        }
    }
}

/// A finished subagent: its private events, virtual end time and summary.
#[derive(Debug)]
pub struct WorkerRun {
    pub buffer: EventBuffer,
    pub end_ms: u64,
    pub result: Result<SubagentSummary, KernelError>,
}

/// Mutable per-subagent state.
#[derive(Debug)]
pub struct SubagentState {
    pub subtask: Subtask,
    pub ledger: ContextLedger,
    pub answer: Option<String>,
    pub status: Option<SubagentStatus>,
    pub rounds_used: u32,
}

type PendingCall = (ModelRequest, Result<String, BackendError>, Option<String>);

/// Ledger summarizer backed by the compress role. Exchanges are queued and
/// flushed into the trace once the ledger operation returns.
struct CompressSummarizer<'a> {
    env: WorkerEnv<'a>,
    subagent: &'a str,
    pending: RefCell<Vec<PendingCall>>,
}

impl CompressSummarizer<'_> {
    fn flush<S: EventSink>(&self, rec: &mut Recorder<S>) {
        for (req, reply, parse_error) in self.pending.borrow_mut().drain(..) {
            rec.log_call(&req, &reply, parse_error.as_deref());
        }
    }
}

impl crate::ledger::Summarizer for CompressSummarizer<'_> {
    fn summarize(&self, request: &SummaryRequest) -> Result<String, SummarizerUnavailable> {
        let purpose = serde_json::to_value(request.purpose).expect("purpose serializes");
        let messages = vec![
            Message::new(
                MessageRole::System,
                format!(
                    "Compress the following tool records ({}) into at most {} characters.",
                    purpose.as_str().unwrap_or("round"),
                    request.cap
                ),
            ),
            Message::new(MessageRole::User, request.render()),
        ];
        let req = self.env.request(Role::Compress, request.round, self.subagent, messages);
        let reply = self.env.model.complete(&req);
        let (result, parse_error) = match &reply {
            Ok(text) => match crate::model::ModelReply::parse(Role::Compress, text) {
                Ok(r) => match r.payload {
                    ReplyPayload::Summary(s) => (Ok(s), None),
                    _ => unreachable!("parse checks the payload matches the role"),
                },
                Err(e) => (Err(SummarizerUnavailable(e.to_string())), Some(e.to_string())),
            },
            Err(e) => (Err(SummarizerUnavailable(e.to_string())), None),
        };
        self.pending.borrow_mut().push((req, reply, parse_error));
        result
    }
}

fn context_budget(config: &KernelConfig) -> usize {
    config.ledger.tau_context.max(config.ledger.summary_cap)
}

fn act_messages(state: &SubagentState, budget: usize) -> Result<Vec<Message>, KernelError> {
    let mut messages = vec![
        Message::new(
            MessageRole::System,
            format!("You are subagent {}. Issue a batch of tool calls or give your answer.", state.subtask.subagent_id),
        ),
        Message::new(MessageRole::User, state.subtask.prompt.clone()),
    ];
    messages.extend(state.ledger.render_context(budget)?);
    Ok(messages)
}

fn outcome_payload(subagent: &str, main_round: u32, round: u32, call_args: &Value, o: &ToolOutcome) -> Value {
    let mut p = json!({
        "subagent": subagent,
        "main_round": main_round,
        "round": round,
        "call_index": o.call_index,
        "tool": o.tool_name,
        "args": call_args,
        "latency_ms": o.latency_ms,
    });
    match &o.result {
        Ok(out) => {
            p["output"] = Value::String(out.clone());
            p["output_digest"] = Value::String(text_digest(out));
        }
        Err(f) => p["error"] = serde_json::to_value(f).expect("failure serializes"),
    }
    p
}

/// Close the worker round: tier 2 then tier 3, tracing both.
fn close_round<S: EventSink>(
    state: &mut SubagentState,
    summarizer: &CompressSummarizer<'_>,
    rec: &mut Recorder<S>,
) -> RoundClosure {
    let closure = state.ledger.close_round(summarizer);
    summarizer.flush(rec);
    let mut payload = serde_json::to_value(&closure).expect("closure serializes");
    payload["subagent"] = Value::String(state.subtask.subagent_id.clone());
    rec.emit(EventKind::RoundSummary, payload);
    let reports = state.ledger.enforce_budget(summarizer);
    summarizer.flush(rec);
    for r in reports {
        let mut payload = serde_json::to_value(&r).expect("report serializes");
        payload["subagent"] = Value::String(state.subtask.subagent_id.clone());
        rec.emit(EventKind::Compression, payload);
    }
    closure
}

fn run_batch<S: EventSink>(
    env: &WorkerEnv<'_>,
    state: &mut SubagentState,
    round: u32,
    calls: Vec<crate::scheduler::ToolCall>,
    rec: &mut Recorder<S>,
) {
    let id = state.subtask.subagent_id.clone();
    let batch = ToolBatch { calls, issued_by: id.clone(), round };
    let batch = match validate_batch_with_cap(batch, env.config.scheduler.batch_cap) {
        Ok(b) => b,
        Err(e) => {
            rec.emit(EventKind::BatchRejected, json!({"subagent": id, "round": round, "error": e.to_string()}));
            state.ledger.record_note(&format!("tool batch rejected: {e}"));
            return;
        }
    };
    rec.emit(EventKind::ToolBatch, json!({"subagent": id, "round": round, "calls": batch.calls}));
    let opts = DispatchOptions {
        timeout_ms: env.config.scheduler.tool_timeout_ms,
        allowlist: state.subtask.tool_allowlist.as_deref(),
        main_round: env.main_round,
        seed: env.seed,
    };
    let outcomes = dispatch_parallel(&batch, env.tools, &opts);
    rec.advance(outcomes.iter().map(|o| o.latency_ms).max().unwrap_or(0));
    for o in &outcomes {
        let call = batch.calls.iter().find(|c| c.call_index == o.call_index).expect("one outcome per call");
        rec.emit(EventKind::ToolResult, outcome_payload(&id, env.main_round, round, &call.arguments, o));
        let sub_query = serde_json::to_string(&call.arguments).expect("args serialize");
        let record = state.ledger.record_tool_result(&o.tool_name, &sub_query, &o.ledger_text());
        if record.truncated {
            rec.emit(
                EventKind::Truncation,
                json!({
                    "subagent": id,
                    "round": round,
                    "record_id": record.record_id,
                    "tool": record.tool_name,
                    "original_length": record.original_length,
                    "kept_length": crate::ledger::char_len(record.kept_content()),
                }),
            );
        }
    }
}

/// Ask the verifier about a candidate answer. A malformed verdict counts as
/// a retry request; backend failures are fatal.
pub fn verify_subagent<S: EventSink>(
    env: &WorkerEnv<'_>,
    state: &SubagentState,
    round: u32,
    candidate: &str,
    rec: &mut Recorder<S>,
) -> Result<VerificationOutcome, KernelError> {
    let mut messages = vec![
        Message::new(
            MessageRole::System,
            "Check the candidate answer against the subtask and the evidence. Reply accepted, retry or rejected.",
        ),
        Message::new(MessageRole::User, state.subtask.prompt.clone()),
        Message::named(MessageRole::Assistant, state.subtask.subagent_id.clone(), candidate),
    ];
    messages.extend(state.ledger.render_context(context_budget(env.config))?);
    let req = env.request(Role::Verify, round, &state.subtask.subagent_id, messages);
    let outcome = match rec.call(env.model, &req) {
        CallOutcome::Reply(ReplyPayload::Verify(v)) => v,
        CallOutcome::Reply(_) => unreachable!("parse checks the payload matches the role"),
        CallOutcome::Malformed(e) => {
            VerificationOutcome { verdict: Verdict::Retry, note: format!("unreadable verdict: {e}") }
        }
        CallOutcome::Failed(e) => return Err(KernelError::from_backend(Role::Verify, e)),
    };
    rec.emit(
        EventKind::Verification,
        json!({
            "subagent": state.subtask.subagent_id,
            "round": round,
            "verdict": outcome.verdict,
            "note": outcome.note,
        }),
    );
    Ok(outcome)
}

/// Condense a finished subagent for the main context. Falls back to
/// head+tail extraction when the summarizer fails; an empty history yields
/// an empty summary without a model call.
pub fn summarize_subagent<S: EventSink>(
    env: &WorkerEnv<'_>,
    state: &SubagentState,
    rec: &mut Recorder<S>,
) -> SubagentSummary {
    let status = state.status.unwrap_or(SubagentStatus::Exhausted);
    let mut transcript = state.ledger.transcript();
    if let Some(a) = &state.answer {
        transcript.push_str(&format!("[result]\n{a}\n"));
    }
    let cap = env.config.ledger.summary_cap;
    let (text, fallback) = if transcript.is_empty() {
        (String::new(), false)
    } else {
        let messages = vec![
            Message::new(
                MessageRole::System,
                format!("Summarize this subagent's work and result in at most {cap} characters."),
            ),
            Message::new(MessageRole::User, state.subtask.prompt.clone()),
            Message::new(MessageRole::Note, transcript.clone()),
        ];
        let req = env.request(Role::Summarize, state.rounds_used, &state.subtask.subagent_id, messages);
        match rec.call(env.model, &req) {
            CallOutcome::Reply(ReplyPayload::Summary(s)) => (s.chars().take(cap).collect(), false),
            _ => (head_tail(&transcript, cap), true),
        }
    };
    let summary = SubagentSummary {
        subagent_id: state.subtask.subagent_id.clone(),
        result: state.answer.clone(),
        status,
        text,
        fallback,
        rounds_used: state.rounds_used,
    };
    rec.emit(EventKind::SubagentSummary, serde_json::to_value(&summary).expect("summary serializes"));
    summary
}

fn worker_loop<S: EventSink>(
    env: &WorkerEnv<'_>,
    state: &mut SubagentState,
    rec: &mut Recorder<S>,
) -> Result<(), KernelError> {
    let id = state.subtask.subagent_id.clone();
    let summarizer = CompressSummarizer { env: *env, subagent: &id, pending: RefCell::new(Vec::new()) };
    let budget = context_budget(env.config);
    for round in 0..env.max_rounds {
        state.rounds_used = round + 1;
        let req = env.request(Role::Act, round, &id, act_messages(state, budget)?);
        let mut done = false;
        match rec.call(env.model, &req) {
            CallOutcome::Failed(e) => return Err(KernelError::from_backend(Role::Act, e)),
            CallOutcome::Malformed(e) => {
                let text = format!("previous reply was not understood: {e}");
                rec.emit(EventKind::Note, json!({"subagent": id, "round": round, "text": text}));
                state.ledger.record_note(&text);
            }
            CallOutcome::Reply(ReplyPayload::Act(ActDirective::Tools(calls))) => {
                run_batch(env, state, round, calls, rec);
            }
            CallOutcome::Reply(ReplyPayload::Act(ActDirective::Answer { text, verify })) => {
                state.answer = Some(text.clone());
                if !verify {
                    state.status = Some(SubagentStatus::Unverified);
                    done = true;
                } else {
                    let v = verify_subagent(env, state, round, &text, rec)?;
                    match v.verdict {
                        Verdict::Accepted => {
                            state.status = Some(SubagentStatus::Accepted);
                            done = true;
                        }
                        Verdict::Rejected => {
                            state.status = Some(SubagentStatus::Rejected);
                            done = true;
                        }
                        Verdict::Retry if round + 1 >= env.max_rounds => {
                            state.status = Some(SubagentStatus::Rejected);
                            done = true;
                        }
                        Verdict::Retry => {
                            state.ledger.record_note(&format!("verifier asked for a retry: {}", v.note));
                        }
                    }
                }
            }
            CallOutcome::Reply(_) => unreachable!("parse checks the payload matches the role"),
        }
        close_round(state, &summarizer, rec);
        if done {
            return Ok(());
        }
    }
    state.status = Some(SubagentStatus::Exhausted);
    Ok(())
}

/// Run one subagent to completion on a private event buffer.
pub fn run_subagent(env: &WorkerEnv<'_>, subtask: &Subtask, start_ms: u64) -> WorkerRun {
    let mut rec = Recorder::new(EventBuffer::new(), start_ms, env.config.runtime.model_call_ms);
    rec.emit(
        EventKind::SubagentStart,
        json!({
            "subagent": subtask.subagent_id,
            "main_round": env.main_round,
            "prompt": subtask.prompt,
            "tools": subtask.tool_allowlist,
            "max_rounds": env.max_rounds,
        }),
    );
    let result = ContextLedger::new(env.config.ledger).map_err(KernelError::from).and_then(|ledger| {
        let mut state = SubagentState { subtask: subtask.clone(), ledger, answer: None, status: None, rounds_used: 0 };
        worker_loop(env, &mut state, &mut rec)?;
        // no verifier verdict was recorded on these paths
        if let Some(status @ (SubagentStatus::Exhausted | SubagentStatus::Unverified)) = state.status {
            rec.emit(
                EventKind::Verification,
                json!({"subagent": subtask.subagent_id, "round": state.rounds_used, "verdict": null, "status": status}),
            );
        }
        Ok(summarize_subagent(env, &state, &mut rec))
    });
    WorkerRun { end_ms: rec.now(), buffer: rec.sink, result }
}
