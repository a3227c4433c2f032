//! Tool registry and per-call outcomes.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::scheduler::ToolCall;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolErrorKind {
    UnknownTool,
    NotAllowed,
    Timeout,
    Network,
    RateLimited,
    MalformedQuery,
    NotFound,
    ParseFailure,
    Internal,
}

impl fmt::Display for ToolErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant serializes");
        f.write_str(s.as_str().unwrap_or("internal"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolFailure {
    pub kind: ToolErrorKind,
    pub message: String,
}

impl ToolFailure {
    pub fn new(kind: ToolErrorKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }
}

/// What a tool produced plus the (simulated) time it took.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolResponse {
    pub result: Result<String, ToolFailure>,
    pub latency_ms: u64,
}

impl ToolResponse {
    pub fn ok(output: impl Into<String>, latency_ms: u64) -> Self {
        Self { result: Ok(output.into()), latency_ms }
    }

    pub fn err(kind: ToolErrorKind, message: impl Into<String>, latency_ms: u64) -> Self {
        Self { result: Err(ToolFailure::new(kind, message)), latency_ms }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolContext {
    pub subagent: String,
    pub main_round: u32,
    pub round: u32,
    pub seed: u64,
}

pub trait Tool: Send + Sync {
    fn call(&self, call: &ToolCall, ctx: &ToolContext) -> ToolResponse;
}

impl<F> Tool for F
where
    F: Fn(&ToolCall, &ToolContext) -> ToolResponse + Send + Sync,
{
    fn call(&self, call: &ToolCall, ctx: &ToolContext) -> ToolResponse {
        self(call, ctx)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolOutcome {
    pub call_index: usize,
    pub tool_name: String,
    pub result: Result<String, ToolFailure>,
    pub latency_ms: u64,
}

impl ToolOutcome {
    pub fn is_ok(&self) -> bool {
        self.result.is_ok()
    }

    /// Text that enters the ledger: output on success, an error line otherwise.
    pub fn ledger_text(&self) -> String {
        match &self.result {
            Ok(out) => out.clone(),
            Err(f) => format!("[tool error: {}] {}", f.kind, f.message),
        }
    }
}

#[derive(Clone, Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, Arc<dyn Tool>>,
}

impl fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ToolRegistry").field("tools", &self.tools.keys().collect::<Vec<_>>()).finish()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, tool: impl Tool + 'static) -> &mut Self {
        self.tools.insert(name.into(), Arc::new(tool));
        self
    }

    pub fn register_arc(&mut self, name: impl Into<String>, tool: Arc<dyn Tool>) -> &mut Self {
        self.tools.insert(name.into(), tool);
        self
    }

    pub fn resolve(&self, name: &str) -> Option<&Arc<dyn Tool>> {
        self.tools.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }
}
