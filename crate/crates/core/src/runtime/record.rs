use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::model::{BackendError, ModelBackend, ModelReply, ModelRequest, ReplyParseError, ReplyPayload, Role};
use crate::trace::{EventBuffer, EventKind, Trace};

use super::KernelError;

pub trait EventSink {
    fn emit_at(&mut self, wall_offset_ms: u64, kind: EventKind, payload: Value);
}

impl EventSink for Trace {
    fn emit_at(&mut self, wall_offset_ms: u64, kind: EventKind, payload: Value) {
        self.record(wall_offset_ms, kind, payload);
    }
}

impl EventSink for EventBuffer {
    fn emit_at(&mut self, wall_offset_ms: u64, kind: EventKind, payload: Value) {
        self.push(wall_offset_ms, kind, payload);
    }
}

pub fn text_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Trace payload for one model exchange. Only planner calls carry their full
/// message list; everything else is identified by digest.
pub fn model_call_payload(req: &ModelRequest, reply: &Result<String, BackendError>, full_messages: bool) -> Value {
    let mut p = json!({
        "role": req.role,
        "main_round": req.main_round,
        "round": req.round,
        "subagent": req.subagent,
        "context_chars": req.context_chars(),
        "context_digest": req.context_digest(),
    });
    if full_messages {
        p["messages"] = serde_json::to_value(&req.messages).expect("messages serialize");
    }
    match reply {
        Ok(text) => {
            p["reply"] = Value::String(text.clone());
            p["reply_digest"] = Value::String(text_digest(text));
        }
        Err(e) => p["error"] = serde_json::to_value(e).expect("backend error serializes"),
    }
    p
}

#[derive(Debug)]
pub enum CallOutcome {
    Reply(ReplyPayload),
    Malformed(ReplyParseError),
    Failed(BackendError),
}

impl CallOutcome {
    /// Treat anything but a well-formed reply as fatal.
    pub fn require(self, role: Role) -> Result<ReplyPayload, KernelError> {
        match self {
            CallOutcome::Reply(p) => Ok(p),
            CallOutcome::Malformed(source) => Err(KernelError::MalformedReply { role, source }),
            CallOutcome::Failed(e) => Err(KernelError::from_backend(role, e)),
        }
    }
}

/// An execution context's event sink plus its virtual clock.
#[derive(Debug)]
pub struct Recorder<S> {
    pub sink: S,
    now: u64,
    model_call_ms: u64,
}

impl<S: EventSink> Recorder<S> {
    pub fn new(sink: S, start_ms: u64, model_call_ms: u64) -> Self {
        Self { sink, now: start_ms, model_call_ms }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn advance(&mut self, ms: u64) {
        self.now += ms;
    }

    pub fn advance_to(&mut self, t: u64) {
        self.now = self.now.max(t);
    }

    pub fn emit(&mut self, kind: EventKind, payload: Value) {
        self.sink.emit_at(self.now, kind, payload);
    }

    /// Record an exchange that already happened (one virtual call's time).
    pub fn log_call(&mut self, req: &ModelRequest, reply: &Result<String, BackendError>, parse_error: Option<&str>) {
        self.now += self.model_call_ms;
        let mut payload = model_call_payload(req, reply, req.role == Role::Plan);
        if let Some(e) = parse_error {
            payload["parse_error"] = Value::String(e.to_string());
        }
        self.emit(EventKind::ModelCall, payload);
    }

    /// Call the backend, parse against the request's role and trace both.
    pub fn call(&mut self, model: &dyn ModelBackend, req: &ModelRequest) -> CallOutcome {
        let reply = model.complete(req);
        let outcome = match &reply {
            Ok(text) => match ModelReply::parse(req.role, text) {
                Ok(r) => CallOutcome::Reply(r.payload),
                Err(e) => CallOutcome::Malformed(e),
            },
            Err(e) => CallOutcome::Failed(e.clone()),
        };
        let parse_error = match &outcome {
            CallOutcome::Malformed(e) => Some(e.to_string()),
            _ => None,
        };
        self.log_call(req, &reply, parse_error.as_deref());
        outcome
    }
}
