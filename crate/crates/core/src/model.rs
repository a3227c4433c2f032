//! Pluggable model backend and the structured reply envelope.
//!
//! Backends return plain text. The kernel parses that text with a strict JSON
//! schema keyed by a `kind` tag; the tag must agree with the role the call
//! was made for. Unknown fields are rejected.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::memory::SkillKind;
use crate::scheduler::{RoutingDecision, Subtask, ToolCall};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Plan,
    Act,
    Verify,
    Summarize,
    Aggregate,
    Reason,
    /// Skill extraction at memory write-back.
    Extract,
    /// Ledger summarizer for round and retroactive compression.
    Compress,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Plan => "plan",
            Role::Act => "act",
            Role::Verify => "verify",
            Role::Summarize => "summarize",
            Role::Aggregate => "aggregate",
            Role::Reason => "reason",
            Role::Extract => "extract",
            Role::Compress => "compress",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageRole {
    System,
    User,
    Assistant,
    Tool,
    Memory,
    Summary,
    Note,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: MessageRole,
    /// Tool or subagent name; metadata, not counted against budgets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Sub-query that produced a tool message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    pub content: String,
}

impl Message {
    pub fn new(role: MessageRole, content: impl Into<String>) -> Self {
        Self { role, name: None, query: None, content: content.into() }
    }

    pub fn named(role: MessageRole, name: impl Into<String>, content: impl Into<String>) -> Self {
        Self { role, name: Some(name.into()), query: None, content: content.into() }
    }

    /// Characters that count against a context budget: content plus query.
    pub fn char_len(&self) -> usize {
        self.content.chars().count() + self.query.as_deref().map_or(0, |q| q.chars().count())
    }
}

/// Sampling knobs passed through untouched. Deterministic backends ignore them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationOptions {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self { temperature: 1.0, max_output_tokens: 128_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRequest {
    pub role: Role,
    /// Main-loop round the call belongs to.
    pub main_round: u32,
    /// Worker round for act/verify/compress, otherwise equal to `main_round`.
    pub round: u32,
    pub subagent: Option<String>,
    pub seed: u64,
    pub messages: Vec<Message>,
    pub options: GenerationOptions,
}

impl ModelRequest {
    pub fn context_chars(&self) -> usize {
        self.messages.iter().map(Message::char_len).sum()
    }

    /// Stable digest of the message list, recorded in traces instead of the
    /// full context for most roles.
    pub fn context_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for m in &self.messages {
            let line = serde_json::to_string(m).expect("message serializes");
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    pub fn context_contains(&self, needle: &str) -> bool {
        self.messages.iter().any(|m| m.content.contains(needle))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", content = "detail", rename_all = "snake_case")]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("no scripted reply for {0}")]
    NoScript(String),
}

pub trait ModelBackend: Send + Sync {
    fn complete(&self, request: &ModelRequest) -> Result<String, BackendError>;
}

impl<T: ModelBackend + ?Sized> ModelBackend for &T {
    fn complete(&self, request: &ModelRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

impl<T: ModelBackend + ?Sized> ModelBackend for std::sync::Arc<T> {
    fn complete(&self, request: &ModelRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Retry,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationOutcome {
    pub verdict: Verdict,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanDirective {
    /// Route to subagents; `resolves` marks this as the last routing round.
    Route {
        decision: RoutingDecision,
        resolves: bool,
    },
    Finish {
        rationale: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActDirective {
    Tools(Vec<ToolCall>),
    Answer { text: String, verify: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReply {
    pub answer: Option<String>,
    pub confidence: f64,
    pub contributors: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkillDraft {
    pub kind: SkillKind,
    pub skill_text: String,
    #[serde(default = "default_skill_confidence")]
    pub confidence: f64,
}

fn default_skill_confidence() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplyPayload {
    Plan(PlanDirective),
    Act(ActDirective),
    Verify(VerificationOutcome),
    Summary(String),
    Final(AggregateReply),
    Intent(String),
    Skills(Vec<SkillDraft>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelReply {
    pub role: Role,
    pub payload: ReplyPayload,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplyParseError {
    #[error("reply for role {role} is not valid: {detail}")]
    Schema { role: Role, detail: String },
    #[error("reply kind `{found}` does not match role {role}")]
    RoleMismatch { role: Role, found: String },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubtaskWire {
    id: String,
    prompt: String,
    #[serde(default)]
    tools: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CallWire {
    #[serde(default)]
    index: Option<usize>,
    tool: String,
    #[serde(default)]
    args: Value,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ReplyWire {
    Route {
        subtasks: Vec<SubtaskWire>,
        #[serde(default)]
        rationale: String,
        #[serde(default = "default_true")]
        resolves: bool,
    },
    Finish {
        #[serde(default)]
        rationale: String,
    },
    Tools {
        calls: Vec<CallWire>,
    },
    Answer {
        text: String,
        #[serde(default)]
        verify: bool,
    },
    Verdict {
        outcome: Verdict,
        #[serde(default)]
        note: String,
    },
    Summary {
        text: String,
    },
    Final {
        #[serde(default)]
        answer: Option<String>,
        confidence: f64,
        #[serde(default)]
        contributors: Option<Vec<String>>,
    },
    Intent {
        note: String,
    },
    Skills {
        entries: Vec<SkillDraft>,
    },
}

impl ReplyWire {
    fn kind(&self) -> &'static str {
        match self {
            ReplyWire::Route { .. } => "route",
            ReplyWire::Finish { .. } => "finish",
            ReplyWire::Tools { .. } => "tools",
            ReplyWire::Answer { .. } => "answer",
            ReplyWire::Verdict { .. } => "verdict",
            ReplyWire::Summary { .. } => "summary",
            ReplyWire::Final { .. } => "final",
            ReplyWire::Intent { .. } => "intent",
            ReplyWire::Skills { .. } => "skills",
        }
    }
}

impl ModelReply {
    /// Parse backend text for `role`.
    pub fn parse(role: Role, text: &str) -> Result<Self, ReplyParseError> {
        let wire: ReplyWire =
            serde_json::from_str(text.trim()).map_err(|e| ReplyParseError::Schema { role, detail: e.to_string() })?;
        let found = wire.kind();
        let mismatch = || ReplyParseError::RoleMismatch { role, found: found.to_string() };
        let payload = match (role, wire) {
            (Role::Plan, ReplyWire::Route { subtasks, rationale, resolves }) => {
                ReplyPayload::Plan(PlanDirective::Route {
                    decision: RoutingDecision {
                        subtasks: subtasks
                            .into_iter()
                            .map(|s| Subtask { subagent_id: s.id, prompt: s.prompt, tool_allowlist: s.tools })
                            .collect(),
                        rationale,
                    },
                    resolves,
                })
            }
            (Role::Plan, ReplyWire::Finish { rationale }) => ReplyPayload::Plan(PlanDirective::Finish { rationale }),
            (Role::Act, ReplyWire::Tools { calls }) => ReplyPayload::Act(ActDirective::Tools(
                calls
                    .into_iter()
                    .enumerate()
                    .map(|(pos, c)| ToolCall {
                        call_index: c.index.unwrap_or(pos),
                        tool_name: c.tool,
                        arguments: c.args,
                    })
                    .collect(),
            )),
            (Role::Act, ReplyWire::Answer { text, verify }) => ReplyPayload::Act(ActDirective::Answer { text, verify }),
            (Role::Verify, ReplyWire::Verdict { outcome, note }) => {
                ReplyPayload::Verify(VerificationOutcome { verdict: outcome, note })
            }
            (Role::Summarize | Role::Compress, ReplyWire::Summary { text }) => ReplyPayload::Summary(text),
            (Role::Aggregate, ReplyWire::Final { answer, confidence, contributors }) => {
                if !confidence.is_finite() {
                    return Err(ReplyParseError::Schema { role, detail: "confidence must be finite".into() });
                }
                ReplyPayload::Final(AggregateReply { answer, confidence, contributors })
            }
            (Role::Reason, ReplyWire::Intent { note }) => ReplyPayload::Intent(note),
            (Role::Extract, ReplyWire::Skills { entries }) => ReplyPayload::Skills(entries),
            _ => return Err(mismatch()),
        };
        Ok(Self { role, payload })
    }
}
