use sha2::{Digest, Sha256};

use super::{MemoryEntry, MemoryStore};
use crate::model::{
    BackendError, GenerationOptions, Message, MessageRole, ModelBackend, ModelReply, ModelRequest, ReplyPayload, Role,
};
use crate::runtime::FinalAnswer;
use crate::trace::{EventKind, Trace};

/// Result of one extraction pass. `request`/`reply` are kept so the caller
/// can trace the model call.
#[derive(Debug, Clone)]
pub struct ExtractionOutcome {
    pub entries: Vec<MemoryEntry>,
    pub request: Option<ModelRequest>,
    pub reply: Option<Result<String, BackendError>>,
    pub failure: Option<String>,
}

const EVENT_EXCERPT: usize = 240;

fn excerpt(s: &str) -> String {
    s.chars().take(EVENT_EXCERPT).collect()
}

pub fn task_digest(prompt: &str) -> String {
    hex::encode(&Sha256::digest(prompt.as_bytes())[..8])
}

/// Condensed view of the trajectory handed to the extractor.
fn trajectory_messages(trace: &Trace) -> Vec<Message> {
    let mut out = Vec::new();
    for e in &trace.events {
        let line = match e.kind {
            EventKind::ToolResult => format!(
                "tool {} -> {}",
                e.payload["tool"].as_str().unwrap_or("?"),
                excerpt(
                    &e.payload["output"].as_str().map(str::to_string).unwrap_or_else(|| e.payload["error"].to_string())
                )
            ),
            EventKind::ModelCall => match e.payload["reply"].as_str() {
                Some(reply) => format!("{} reply: {}", e.payload["role"].as_str().unwrap_or("?"), excerpt(reply)),
                None => continue,
            },
            EventKind::Verification => format!("verification: {}", e.payload["verdict"]),
            _ => continue,
        };
        out.push(Message::new(MessageRole::Note, line));
    }
    out
}

/// Distill skill entries from a finished run, regardless of its outcome.
///
/// An empty trace yields nothing without calling the backend. Backend or
/// parse failures yield zero entries with `failure` set.
#[allow(clippy::too_many_arguments)]
pub fn extract_skills(
    trace: &Trace,
    task_prompt: &str,
    answer: &FinalAnswer,
    model: &dyn ModelBackend,
    store: &MemoryStore,
    seed: u64,
    options: GenerationOptions,
    created_at: u64,
) -> ExtractionOutcome {
    let mut outcome = ExtractionOutcome { entries: Vec::new(), request: None, reply: None, failure: None };
    if trace.events.is_empty() {
        return outcome;
    }
    let mut messages = vec![
        Message::new(
            MessageRole::System,
            "Extract reusable skills (code snippets, tool usage, insights, decision rules, workflow patterns) from this run, whether it succeeded or not.",
        ),
        Message::new(MessageRole::User, task_prompt),
        Message::new(
            MessageRole::Note,
            format!("final answer: {} (confidence {:.3})", answer.answer, answer.confidence),
        ),
    ];
    messages.extend(trajectory_messages(trace));
    let request =
        ModelRequest { role: Role::Extract, main_round: 0, round: 0, subagent: None, seed, messages, options };
    let reply = model.complete(&request);
    outcome.request = Some(request);
    outcome.reply = Some(reply.clone());
    let text = match reply {
        Ok(t) => t,
        Err(e) => {
            outcome.failure = Some(e.to_string());
            return outcome;
        }
    };
    let drafts = match ModelReply::parse(Role::Extract, &text) {
        Ok(ModelReply { payload: ReplyPayload::Skills(d), .. }) => d,
        Ok(_) => unreachable!("parse checks the payload matches the role"),
        Err(e) => {
            outcome.failure = Some(e.to_string());
            return outcome;
        }
    };
    let digest = task_digest(task_prompt);
    for (i, d) in drafts.iter().enumerate() {
        let id = format!("{}-s{i}", trace.trace_id);
        match store.make_entry(id, d.kind, &d.skill_text, &trace.trace_id, &digest, d.confidence, created_at) {
            Ok(e) => outcome.entries.push(e),
            Err(e) => {
                outcome.failure.get_or_insert_with(|| e.to_string());
            }
        }
    }
    outcome
}
