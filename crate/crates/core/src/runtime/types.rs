use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::LedgerError;
use crate::memory::MemoryError;
use crate::model::{BackendError, ReplyParseError, Role};
use crate::scheduler::ScheduleError;

pub const DEFAULT_MAIN_ROUNDS: u32 = 10;
pub const DEFAULT_WORKER_ROUNDS: u32 = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub name: String,
    #[serde(with = "b64")]
    pub bytes: Vec<u8>,
}

mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        STANDARD.decode(s).map_err(serde::de::Error::custom)
    }
}

fn default_main() -> u32 {
    DEFAULT_MAIN_ROUNDS
}

fn default_worker() -> u32 {
    DEFAULT_WORKER_ROUNDS
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub id: String,
    pub prompt: String,
    #[serde(default)]
    pub attachments: Vec<Attachment>,
    #[serde(default = "default_main")]
    pub deadline_rounds_main: u32,
    #[serde(default = "default_worker")]
    pub deadline_rounds_worker: u32,
}

impl Task {
    pub fn new(id: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            prompt: prompt.into(),
            attachments: Vec::new(),
            deadline_rounds_main: DEFAULT_MAIN_ROUNDS,
            deadline_rounds_worker: DEFAULT_WORKER_ROUNDS,
        }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if self.id.trim().is_empty() {
            return Err(KernelError::InvalidTask("task id is empty".into()));
        }
        if self.prompt.trim().is_empty() {
            return Err(KernelError::InvalidTask("prompt is empty".into()));
        }
        if self.deadline_rounds_main == 0 || self.deadline_rounds_worker == 0 {
            return Err(KernelError::InvalidTask("round deadlines must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerStatus {
    Completed,
    /// The main loop hit its cap without a terminal plan; the answer is
    /// best effort and confidence is 0.
    RoundLimitExceeded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub answer: String,
    pub confidence: f64,
    pub contributing_subagents: Vec<String>,
    pub trace_id: String,
    pub status: AnswerStatus,
}

impl FinalAnswer {
    pub fn round_limit_exceeded(&self) -> bool {
        self.status == AnswerStatus::RoundLimitExceeded
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubagentStatus {
    Accepted,
    /// Answered without requesting verification.
    Unverified,
    Rejected,
    /// Ran out of worker rounds before answering.
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubagentSummary {
    pub subagent_id: String,
    pub result: Option<String>,
    pub status: SubagentStatus,
    pub text: String,
    /// True when the summarizer failed and head+tail extraction was used.
    pub fallback: bool,
    pub rounds_used: u32,
}

impl SubagentSummary {
    pub fn failed(&self) -> bool {
        matches!(self.status, SubagentStatus::Rejected | SubagentStatus::Exhausted)
    }
}

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("model backend unavailable for {role}: {detail}")]
    BackendUnavailable { role: Role, detail: String },
    #[error("no scripted reply for {role}: {detail}")]
    ScenarioMismatch { role: Role, detail: String },
    #[error("malformed {role} reply: {source}")]
    MalformedReply {
        role: Role,
        #[source]
        source: ReplyParseError,
    },
    #[error("aggregation needs at least one subagent summary")]
    EmptyEnsemble,
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

impl KernelError {
    pub fn from_backend(role: Role, err: BackendError) -> Self {
        match err {
            BackendError::Unavailable(detail) => Self::BackendUnavailable { role, detail },
            BackendError::NoScript(detail) => Self::ScenarioMismatch { role, detail },
        }
    }
}
