//! The orchestration loop: memory-augmented planning, parallel subagents,
//! aggregation and skill write-back, all recorded into one trace.

mod record;
mod types;
mod worker;

use std::convert::Infallible;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub use record::{model_call_payload, text_digest, CallOutcome, EventSink, Recorder};
pub use types::*;
pub use worker::{run_subagent, summarize_subagent, verify_subagent, SubagentState, WorkerEnv, WorkerRun};

use crate::config::KernelConfig;
use crate::memory::{extract_skills, MemoryEntry, MemoryStore, RetrievalResult};
use crate::model::{
    GenerationOptions, Message, MessageRole, ModelBackend, ModelRequest, PlanDirective, ReplyParseError, ReplyPayload,
    Role,
};
use crate::scheduler::{run_ensemble, validate_routing};
use crate::tools::ToolRegistry;
use crate::trace::{EventKind, Trace};

/// A completed run.
#[derive(Debug)]
pub struct RunOutput {
    pub answer: FinalAnswer,
    pub trace: Trace,
    /// Entries admitted by the write gate, in order.
    pub stored: Vec<MemoryEntry>,
}

/// A failed run keeps whatever trace it produced.
#[derive(Debug)]
pub struct RunFailure {
    pub error: KernelError,
    pub trace: Trace,
}

pub fn trace_id_for(task_id: &str, seed: u64) -> String {
    let digest = Sha256::digest(format!("{task_id}:{seed}").as_bytes());
    hex::encode(&digest[..8])
}

/// Memory entries as recorded at run start: everything but the embedding,
/// which the reader recomputes.
pub fn memory_snapshot(store: &MemoryStore) -> Value {
    let entries: Vec<Value> = store
        .snapshot()
        .into_iter()
        .map(|e| {
            let mut v = serde_json::to_value(e).expect("entry serializes");
            if let Some(obj) = v.as_object_mut() {
                obj.remove("embedding");
            }
            v
        })
        .collect();
    Value::Array(entries)
}

fn main_request(
    role: Role,
    main_round: u32,
    seed: u64,
    messages: Vec<Message>,
    options: GenerationOptions,
) -> ModelRequest {
    ModelRequest { role, main_round, round: main_round, subagent: None, seed, messages, options }
}

/// Optional pre-planning pass. Returns the intent note, or `None` when
/// reasoning is disabled.
pub fn optional_reasoning<S: EventSink>(
    task: &Task,
    model: &dyn ModelBackend,
    enabled: bool,
    seed: u64,
    options: GenerationOptions,
    rec: &mut Recorder<S>,
) -> Result<Option<String>, KernelError> {
    if !enabled {
        return Ok(None);
    }
    let messages = vec![
        Message::new(
            MessageRole::System,
            "Before planning, state the intent behind this task and what a good answer must contain.",
        ),
        Message::new(MessageRole::User, task.prompt.clone()),
    ];
    let req = main_request(Role::Reason, 0, seed, messages, options);
    match rec.call(model, &req).require(Role::Reason)? {
        ReplyPayload::Intent(note) => Ok(Some(note)),
        _ => unreachable!("parse checks the payload matches the role"),
    }
}

/// Only the summary text enters the main context; status rides in the name.
fn summary_message(s: &SubagentSummary) -> Message {
    let status = serde_json::to_value(s.status).expect("status serializes");
    let name = format!("{} [{}]", s.subagent_id, status.as_str().unwrap_or("?"));
    Message::named(MessageRole::Summary, name, s.text.clone())
}

/// Combine subagent summaries into the final answer.
///
/// The aggregator may name a subset of the summarized subagents as
/// contributors; when it names none, all of them are listed. When it gives no
/// answer, the first non-failed result is passed through.
#[allow(clippy::too_many_arguments)]
pub fn aggregate_results<S: EventSink>(
    task: &Task,
    summaries: &[SubagentSummary],
    model: &dyn ModelBackend,
    main_round: u32,
    seed: u64,
    options: GenerationOptions,
    trace_id: &str,
    rec: &mut Recorder<S>,
) -> Result<FinalAnswer, KernelError> {
    if summaries.is_empty() {
        return Err(KernelError::EmptyEnsemble);
    }
    let mut messages = vec![
        Message::new(
            MessageRole::System,
            "Combine the subagent results into one final answer with a confidence in [0, 1] and the contributing subagents.",
        ),
        Message::new(MessageRole::User, task.prompt.clone()),
    ];
    messages.extend(summaries.iter().map(summary_message));
    let req = main_request(Role::Aggregate, main_round, seed, messages, options);
    let reply = match rec.call(model, &req).require(Role::Aggregate)? {
        ReplyPayload::Final(r) => r,
        _ => unreachable!("parse checks the payload matches the role"),
    };
    let mut known: Vec<&str> = Vec::new();
    for s in summaries {
        if !known.contains(&s.subagent_id.as_str()) {
            known.push(&s.subagent_id);
        }
    }
    let answer = reply.answer.unwrap_or_else(|| {
        summaries
            .iter()
            .filter(|s| !s.failed())
            .chain(summaries.iter())
            .find_map(|s| s.result.clone())
            .unwrap_or_default()
    });
    let contributors: Vec<String> = match reply.contributors {
        Some(list) if !list.is_empty() => {
            let mut out: Vec<String> = Vec::new();
            for c in list {
                if !known.contains(&c.as_str()) {
                    return Err(KernelError::MalformedReply {
                        role: Role::Aggregate,
                        source: ReplyParseError::Schema {
                            role: Role::Aggregate,
                            detail: format!("contributor `{c}` was not summarized"),
                        },
                    });
                }
                if !out.contains(&c) {
                    out.push(c);
                }
            }
            out
        }
        _ => known.iter().map(|s| s.to_string()).collect(),
    };
    let confidence = reply.confidence.clamp(0.0, 1.0);
    let final_answer = FinalAnswer {
        answer,
        confidence,
        contributing_subagents: contributors,
        trace_id: trace_id.to_string(),
        status: AnswerStatus::Completed,
    };
    rec.emit(
        EventKind::Aggregate,
        json!({
            "answer": final_answer.answer,
            "confidence": final_answer.confidence,
            "raw_confidence": reply.confidence,
            "contributors": final_answer.contributing_subagents,
            "status": final_answer.status,
        }),
    );
    Ok(final_answer)
}

/// Best-effort answer when the main loop runs out of rounds: the latest
/// non-failed result, confidence 0.
fn round_limit_answer<S: EventSink>(
    summaries: &[SubagentSummary],
    trace_id: &str,
    rec: &mut Recorder<S>,
) -> FinalAnswer {
    let best = summaries.iter().rev().find(|s| !s.failed() && s.result.is_some());
    let answer = FinalAnswer {
        answer: best.and_then(|s| s.result.clone()).unwrap_or_default(),
        confidence: 0.0,
        contributing_subagents: best.map(|s| vec![s.subagent_id.clone()]).unwrap_or_default(),
        trace_id: trace_id.to_string(),
        status: AnswerStatus::RoundLimitExceeded,
    };
    rec.emit(
        EventKind::Aggregate,
        json!({
            "answer": answer.answer,
            "confidence": answer.confidence,
            "contributors": answer.contributing_subagents,
            "status": answer.status,
            "skipped": "round_limit",
        }),
    );
    answer
}

fn load_memory<S: EventSink>(
    task: &Task,
    config: &KernelConfig,
    store: &MemoryStore,
    rec: &mut Recorder<S>,
) -> Result<RetrievalResult, KernelError> {
    let hits = store.retrieve(&task.prompt, config.memory.k, config.memory.theta_read)?;
    rec.emit(
        EventKind::MemoryQuery,
        json!({
            "query": task.prompt,
            "k": config.memory.k,
            "theta_read": config.memory.theta_read,
            "store_size": store.len(),
            "hits": hits.len(),
        }),
    );
    for h in &hits.entries {
        rec.emit(
            EventKind::MemoryRead,
            json!({
                "entry_id": h.entry.entry_id,
                "kind": h.entry.kind,
                "similarity": h.similarity,
                "skill_text": h.entry.skill_text,
                "source_trace": h.entry.source_trace,
            }),
        );
    }
    Ok(hits)
}

fn planner_messages(
    task: &Task,
    intent: Option<&str>,
    memory: &RetrievalResult,
    summaries: &[SubagentSummary],
    feedback: &[String],
) -> Vec<Message> {
    let mut messages = Vec::new();
    if let Some(note) = intent {
        messages.push(Message::new(MessageRole::Note, format!("intent: {note}")));
    }
    messages.push(Message::new(
        MessageRole::System,
        "Plan the next step: route subtasks to parallel subagents, or finish when the summaries suffice.",
    ));
    let mut prompt = task.prompt.clone();
    if !task.attachments.is_empty() {
        let names: Vec<&str> = task.attachments.iter().map(|a| a.name.as_str()).collect();
        prompt.push_str(&format!("\nattachments: {}", names.join(", ")));
    }
    messages.push(Message::new(MessageRole::User, prompt));
    for h in &memory.entries {
        messages.push(Message::named(MessageRole::Memory, h.entry.entry_id.clone(), h.entry.skill_text.clone()));
    }
    messages.extend(summaries.iter().map(summary_message));
    messages.extend(feedback.iter().map(|f| Message::new(MessageRole::Note, f.clone())));
    messages
}

struct Kernel<'a> {
    task: &'a Task,
    config: &'a KernelConfig,
    model: &'a dyn ModelBackend,
    tools: &'a ToolRegistry,
    memory: &'a MemoryStore,
    trace_id: String,
    seed: u64,
    options: GenerationOptions,
}

impl Kernel<'_> {
    fn run(&self, rec: &mut Recorder<Trace>) -> Result<(FinalAnswer, Vec<MemoryEntry>), KernelError> {
        let retrieved = load_memory(self.task, self.config, self.memory, rec)?;
        let intent =
            optional_reasoning(self.task, self.model, self.config.runtime.reasoning, self.seed, self.options, rec)?;
        let main_cap = self.task.deadline_rounds_main.min(self.config.runtime.max_main_rounds);
        let worker_cap = self.task.deadline_rounds_worker.min(self.config.runtime.max_worker_rounds);
        let mut summaries: Vec<SubagentSummary> = Vec::new();
        let mut feedback: Vec<String> = Vec::new();
        let mut finished_at = None;
        for main_round in 0..main_cap {
            let messages = planner_messages(self.task, intent.as_deref(), &retrieved, &summaries, &feedback);
            let req = main_request(Role::Plan, main_round, self.seed, messages, self.options);
            let directive = match rec.call(self.model, &req) {
                CallOutcome::Reply(ReplyPayload::Plan(d)) => d,
                CallOutcome::Reply(_) => unreachable!("parse checks the payload matches the role"),
                CallOutcome::Failed(e) => return Err(KernelError::from_backend(Role::Plan, e)),
                CallOutcome::Malformed(e) => {
                    rec.emit(EventKind::RoutingRejected, json!({"main_round": main_round, "error": e.to_string()}));
                    feedback.push(format!("round {main_round}: plan was not understood: {e}"));
                    continue;
                }
            };
            let (decision, resolves) = match directive {
                PlanDirective::Finish { .. } => {
                    finished_at = Some(main_round);
                    break;
                }
                PlanDirective::Route { decision, resolves } => (decision, resolves),
            };
            let decision = match validate_routing(decision, self.config.scheduler.ensemble_cap) {
                Ok(d) => d,
                Err(e) => {
                    rec.emit(EventKind::RoutingRejected, json!({"main_round": main_round, "error": e.to_string()}));
                    feedback.push(format!("round {main_round}: routing rejected: {e}"));
                    continue;
                }
            };
            rec.emit(
                EventKind::Routing,
                json!({
                    "main_round": main_round,
                    "subtasks": decision.subtasks,
                    "rationale": decision.rationale,
                    "resolves": resolves,
                }),
            );
            let env = WorkerEnv {
                model: self.model,
                tools: self.tools,
                config: self.config,
                main_round,
                max_rounds: worker_cap,
                seed: self.seed,
                options: self.options,
            };
            let start = rec.now();
            let runs = run_ensemble(&decision, |_, subtask| Ok::<_, Infallible>(run_subagent(&env, subtask, start)))
                .unwrap_or_else(|never| match never {});
            let mut round_summaries = Vec::with_capacity(runs.len());
            let mut first_error = None;
            for run in runs {
                rec.sink.absorb(run.buffer);
                rec.advance_to(run.end_ms);
                match run.result {
                    Ok(s) => round_summaries.push(s),
                    Err(e) => {
                        first_error.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = first_error {
                return Err(e);
            }
            for s in round_summaries {
                rec.emit(
                    EventKind::Integrate,
                    json!({
                        "main_round": main_round,
                        "subagent": s.subagent_id,
                        "status": s.status,
                        "summary_chars": s.text.chars().count(),
                    }),
                );
                summaries.push(s);
            }
            if resolves {
                finished_at = Some(main_round);
                break;
            }
        }
        let answer = match finished_at {
            Some(main_round) => aggregate_results(
                self.task,
                &summaries,
                self.model,
                main_round,
                self.seed,
                self.options,
                &self.trace_id,
                rec,
            )?,
            None => round_limit_answer(&summaries, &self.trace_id, rec),
        };
        let stored = self.write_back(&answer, rec)?;
        Ok((answer, stored))
    }

    /// Distill skills from the trace and pass each through the write gate.
    fn write_back(&self, answer: &FinalAnswer, rec: &mut Recorder<Trace>) -> Result<Vec<MemoryEntry>, KernelError> {
        let created_at = rec.now();
        let outcome = extract_skills(
            &rec.sink,
            &self.task.prompt,
            answer,
            self.model,
            self.memory,
            self.seed,
            self.options,
            created_at,
        );
        if let (Some(req), Some(reply)) = (&outcome.request, &outcome.reply) {
            let parse_error = match reply {
                Ok(_) => outcome.failure.as_deref(),
                Err(_) => None,
            };
            rec.log_call(req, reply, parse_error);
        }
        rec.emit(
            EventKind::SkillExtraction,
            json!({
                "entries": outcome.entries.iter().map(|e| json!({
                    "entry_id": e.entry_id,
                    "kind": e.kind,
                    "skill_text": e.skill_text,
                    "confidence": e.confidence,
                })).collect::<Vec<_>>(),
                "failure": outcome.failure,
            }),
        );
        let mut decisions = Vec::new();
        let mut stored = Vec::new();
        for entry in outcome.entries {
            let d = self.memory.store(entry.clone())?;
            decisions.push(json!({
                "entry_id": entry.entry_id,
                "stored": d.stored,
                "high_similarity_hits": d.high_similarity_hits,
            }));
            if d.stored {
                stored.push(entry);
            }
        }
        rec.emit(EventKind::MemoryWriteGate, json!({"decisions": decisions, "store_size_after": self.memory.len()}));
        Ok(stored)
    }
}

/// Execute one task end to end.
pub fn run_task(
    task: &Task,
    config: &KernelConfig,
    model: &dyn ModelBackend,
    tools: &ToolRegistry,
    memory: &MemoryStore,
) -> Result<RunOutput, RunFailure> {
    let seed = config.runtime.seed;
    let trace_id = trace_id_for(&task.id, seed);
    let mut rec = Recorder::new(Trace::new(trace_id.clone(), seed), 0, config.runtime.model_call_ms);
    let fail = |error: KernelError, trace: Trace| Err(RunFailure { error, trace });
    if let Err(e) = task.validate() {
        return fail(e, rec.sink);
    }
    if let Err(e) = config.validate() {
        return fail(KernelError::InvalidConfig(e.to_string()), rec.sink);
    }
    rec.emit(
        EventKind::RunStart,
        json!({
            "trace_id": trace_id,
            "seed": seed,
            "task": task,
            "config": config,
            "memory": memory_snapshot(memory),
        }),
    );
    let kernel = Kernel { task, config, model, tools, memory, trace_id, seed, options: config.runtime.generation() };
    match kernel.run(&mut rec) {
        Ok((answer, stored)) => {
            rec.emit(
                EventKind::RunEnd,
                json!({
                    "answer": answer.answer,
                    "confidence": answer.confidence,
                    "contributing_subagents": answer.contributing_subagents,
                    "status": answer.status,
                }),
            );
            Ok(RunOutput { answer, trace: rec.sink, stored })
        }
        Err(error) => {
            rec.emit(EventKind::RunEnd, json!({"error": error.to_string()}));
            fail(error, rec.sink)
        }
    }
}
