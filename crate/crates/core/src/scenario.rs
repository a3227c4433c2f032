//! Scenario files: a task, scripted model replies, fake tools with fault
//! schedules, and memory seeds. Everything a run needs besides config.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{BackoffPolicy, FakeSource, Gateway, GatewayError, GatewayTool};
use crate::memory::{MemoryError, MemoryStore, SkillKind};
use crate::model::{BackendError, ModelBackend, ModelRequest, Role};
use crate::runtime::Task;
use crate::scheduler::ToolCall;
use crate::tools::{Tool, ToolContext, ToolErrorKind, ToolRegistry, ToolResponse};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("tool `{tool}`: {source}")]
    Gateway {
        tool: String,
        #[source]
        source: GatewayError,
    },
    #[error("memory seed: {0}")]
    Memory(#[from] MemoryError),
}

/// Reply body: a structured object serialized verbatim, or raw text (useful
/// for malformed-reply cases).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReplyBody {
    Text(String),
    Json(Value),
}

impl ReplyBody {
    pub fn render(&self) -> String {
        match self {
            ReplyBody::Text(t) => t.clone(),
            ReplyBody::Json(v) => serde_json::to_string(v).expect("json value serializes"),
        }
    }
}

/// One scripted reply. Unset selectors match anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedReply {
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub main_round: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subagent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    /// Every listed needle must occur in some context message.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub context_contains: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<ReplyBody>,
    /// Simulate an outage with this detail instead of replying.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<String>,
}

impl ScriptedReply {
    pub fn new(role: Role, reply: Value) -> Self {
        Self {
            role,
            main_round: None,
            round: None,
            subagent: None,
            seeds: None,
            context_contains: Vec::new(),
            reply: Some(ReplyBody::Json(reply)),
            fail: None,
        }
    }

    pub fn main_round(mut self, r: u32) -> Self {
        self.main_round = Some(r);
        self
    }

    pub fn round(mut self, r: u32) -> Self {
        self.round = Some(r);
        self
    }

    pub fn subagent(mut self, s: impl Into<String>) -> Self {
        self.subagent = Some(s.into());
        self
    }

    pub fn seeds(mut self, seeds: Vec<u64>) -> Self {
        self.seeds = Some(seeds);
        self
    }

    pub fn when_context_contains(mut self, needle: impl Into<String>) -> Self {
        self.context_contains.push(needle.into());
        self
    }

    /// Number of selectors that matched; `None` when any selector fails.
    fn specificity(&self, req: &ModelRequest) -> Option<usize> {
        if self.role != req.role {
            return None;
        }
        let mut score = 0;
        if let Some(r) = self.main_round {
            (r == req.main_round).then_some(())?;
            score += 1;
        }
        if let Some(r) = self.round {
            (r == req.round).then_some(())?;
            score += 1;
        }
        if let Some(s) = &self.subagent {
            (req.subagent.as_deref() == Some(s.as_str())).then_some(())?;
            score += 1;
        }
        if let Some(seeds) = &self.seeds {
            seeds.contains(&req.seed).then_some(())?;
            score += 1;
        }
        for needle in &self.context_contains {
            req.context_contains(needle).then_some(())?;
            score += 1;
        }
        Some(score)
    }
}

/// Stateless lookup over scripted replies: the most specific matching entry
/// wins, ties go to the earliest entry.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    replies: Vec<ScriptedReply>,
}

impl ScriptedBackend {
    pub fn new(replies: Vec<ScriptedReply>) -> Self {
        Self { replies }
    }

    pub fn lookup(&self, req: &ModelRequest) -> Option<&ScriptedReply> {
        let mut best: Option<(usize, &ScriptedReply)> = None;
        for r in &self.replies {
            if let Some(score) = r.specificity(req) {
                if best.is_none_or(|(s, _)| score > s) {
                    best = Some((score, r));
                }
            }
        }
        best.map(|(_, r)| r)
    }
}

impl ModelBackend for ScriptedBackend {
    fn complete(&self, req: &ModelRequest) -> Result<String, BackendError> {
        let describe = || {
            format!(
                "role={} main_round={} round={} subagent={} seed={}",
                req.role,
                req.main_round,
                req.round,
                req.subagent.as_deref().unwrap_or("-"),
                req.seed
            )
        };
        let entry = self.lookup(req).ok_or_else(|| BackendError::NoScript(describe()))?;
        if let Some(detail) = &entry.fail {
            return Err(BackendError::Unavailable(detail.clone()));
        }
        entry.reply.as_ref().map(ReplyBody::render).ok_or_else(|| BackendError::NoScript(describe()))
    }
}

/// A scripted failure for matching calls of a fake tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolFault {
    pub kind: ToolErrorKind,
    #[serde(default)]
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subagent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub main_round: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    /// Fault only when the call's `query` argument equals this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
}

impl ToolFault {
    fn matches(&self, call: &ToolCall, ctx: &ToolContext) -> bool {
        self.subagent.as_ref().is_none_or(|s| *s == ctx.subagent)
            && self.main_round.is_none_or(|r| r == ctx.main_round)
            && self.round.is_none_or(|r| r == ctx.round)
            && self.call_index.is_none_or(|i| i == call.call_index)
            && self.seeds.as_ref().is_none_or(|s| s.contains(&ctx.seed))
            && self.query.as_ref().is_none_or(|q| Some(q.as_str()) == query_arg(&call.arguments))
    }
}

fn query_arg(args: &Value) -> Option<&str> {
    args.get("query").and_then(Value::as_str).or_else(|| args.as_str())
}

fn default_latency() -> u64 {
    10
}

/// Deterministic fake tool.
///
/// Output is `outputs[query]` when present, else `output` with `{query}`
/// substituted, then stretched or cut to `output_len` characters if set.
/// Latency is `latency_ms` plus a seeded offset in `[0, latency_jitter_ms]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FakeTool {
    #[serde(default)]
    pub output: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub outputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_len: Option<usize>,
    #[serde(default = "default_latency")]
    pub latency_ms: u64,
    #[serde(default)]
    pub latency_jitter_ms: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub faults: Vec<ToolFault>,
}

impl Default for FakeTool {
    fn default() -> Self {
        Self {
            output: String::new(),
            outputs: BTreeMap::new(),
            output_len: None,
            latency_ms: default_latency(),
            latency_jitter_ms: 0,
            faults: Vec::new(),
        }
    }
}

fn mix(mut h: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn stretch(text: &str, len: usize) -> String {
    if text.is_empty() {
        return ".".repeat(len);
    }
    text.chars().cycle().take(len).collect()
}

impl FakeTool {
    pub fn text(output: impl Into<String>) -> Self {
        Self { output: output.into(), ..Self::default() }
    }

    fn latency(&self, call: &ToolCall, ctx: &ToolContext) -> u64 {
        if self.latency_jitter_ms == 0 {
            return self.latency_ms;
        }
        let mut h = mix(0xcbf2_9ce4_8422_2325, &ctx.seed.to_le_bytes());
        h = mix(h, ctx.subagent.as_bytes());
        h = mix(h, &ctx.main_round.to_le_bytes());
        h = mix(h, &ctx.round.to_le_bytes());
        h = mix(h, &(call.call_index as u64).to_le_bytes());
        self.latency_ms + h % (self.latency_jitter_ms + 1)
    }
}

impl Tool for FakeTool {
    fn call(&self, call: &ToolCall, ctx: &ToolContext) -> ToolResponse {
        let latency = self.latency(call, ctx);
        if let Some(f) = self.faults.iter().find(|f| f.matches(call, ctx)) {
            let message = if f.message.is_empty() { format!("injected {}", f.kind) } else { f.message.clone() };
            return ToolResponse::err(f.kind, message, latency);
        }
        let query = query_arg(&call.arguments).unwrap_or("");
        let base = match self.outputs.get(query) {
            Some(o) => o.clone(),
            None => self.output.replace("{query}", query),
        };
        let text = match self.output_len {
            Some(n) => stretch(&base, n),
            None => base,
        };
        ToolResponse::ok(text, latency)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewaySpec {
    pub tiers: Vec<FakeSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backoff: Option<BackoffPolicy>,
}

/// A tool is either a plain fake or a gateway over fault-injecting sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ToolSpec {
    Gateway { gateway: GatewaySpec },
    Fake(FakeTool),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemorySeed {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_id: Option<String>,
    pub kind: SkillKind,
    pub skill_text: String,
    #[serde(default = "seed_confidence")]
    pub confidence: f64,
}

fn seed_confidence() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub task: Task,
    /// Used by the pass@k harness to judge attempts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub memory: Vec<MemorySeed>,
    #[serde(default)]
    pub replies: Vec<ScriptedReply>,
    #[serde(default)]
    pub tools: BTreeMap<String, ToolSpec>,
    /// Config overrides applied on top of the run's config, as a partial
    /// config document.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<Value>,
}

impl Scenario {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            expected_answer: None,
            memory: Vec::new(),
            replies: Vec::new(),
            tools: BTreeMap::new(),
            config: None,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_json_str(&text)
    }

    pub fn backend(&self) -> ScriptedBackend {
        ScriptedBackend::new(self.replies.clone())
    }

    pub fn registry(&self, default_backoff: &BackoffPolicy) -> Result<ToolRegistry, ScenarioError> {
        let mut reg = ToolRegistry::new();
        for (name, spec) in &self.tools {
            let tool: Arc<dyn Tool> = match spec {
                ToolSpec::Fake(f) => Arc::new(f.clone()),
                ToolSpec::Gateway { gateway } => {
                    let policy = gateway.backoff.clone().unwrap_or_else(|| default_backoff.clone());
                    let gw = Gateway::from_fakes(gateway.tiers.clone(), policy)
                        .map_err(|source| ScenarioError::Gateway { tool: name.clone(), source })?;
                    Arc::new(GatewayTool::new(gw))
                }
            };
            reg.register_arc(name.clone(), tool);
        }
        Ok(reg)
    }

    /// Insert the memory seeds into `store` without gating.
    pub fn seed_memory(&self, store: &MemoryStore) -> Result<(), ScenarioError> {
        for (i, s) in self.memory.iter().enumerate() {
            let id = s.entry_id.clone().unwrap_or_else(|| format!("seed-{i}"));
            let entry = store.make_entry(id, s.kind, &s.skill_text, "seed", "seed", s.confidence, 0)?;
            store.insert_unchecked(entry)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GenerationOptions, Message, MessageRole};
    use serde_json::json;

    fn req(role: Role, main_round: u32, round: u32, subagent: Option<&str>, seed: u64, ctx: &str) -> ModelRequest {
        ModelRequest {
            role,
            main_round,
            round,
            subagent: subagent.map(str::to_string),
            seed,
            messages: vec![Message::new(MessageRole::User, ctx)],
            options: GenerationOptions::default(),
        }
    }

    #[test]
    fn most_specific_wins_then_file_order() {
        let b = ScriptedBackend::new(vec![
            ScriptedReply::new(Role::Act, json!({"kind": "answer", "text": "generic"})),
            ScriptedReply::new(Role::Act, json!({"kind": "answer", "text": "second generic"})),
            ScriptedReply::new(Role::Act, json!({"kind": "answer", "text": "a1"})).subagent("a").round(1),
            ScriptedReply::new(Role::Act, json!({"kind": "answer", "text": "seeded"})).seeds(vec![2]).round(1),
            ScriptedReply::new(Role::Act, json!({"kind": "answer", "text": "ctx"})).when_context_contains("shazam"),
        ]);
        let text = |r: &ModelRequest| b.complete(r).unwrap();
        assert!(text(&req(Role::Act, 0, 0, Some("a"), 0, "x")).contains("\"generic\""));
        assert!(text(&req(Role::Act, 0, 1, Some("a"), 0, "x")).contains("a1"));
        // two selectors each: earlier entry wins
        assert!(text(&req(Role::Act, 0, 1, Some("a"), 2, "x")).contains("a1"));
        assert!(text(&req(Role::Act, 0, 1, Some("b"), 2, "x")).contains("seeded"));
        assert!(text(&req(Role::Act, 0, 0, Some("b"), 0, "use shazam")).contains("ctx"));
        assert!(matches!(b.complete(&req(Role::Plan, 0, 0, None, 0, "x")), Err(BackendError::NoScript(_))));
    }

    #[test]
    fn lookup_is_pure_and_fail_entries_error() {
        let mut fail = ScriptedReply::new(Role::Verify, json!({}));
        fail.fail = Some("down".into());
        let b = ScriptedBackend::new(vec![fail]);
        let r = req(Role::Verify, 0, 0, None, 0, "x");
        assert_eq!(b.complete(&r), Err(BackendError::Unavailable("down".into())));
        assert_eq!(b.complete(&r), b.complete(&r));
    }

    #[test]
    fn fake_tool_behaviour() {
        let t = FakeTool {
            output: "result for {query}".into(),
            output_len: Some(30),
            latency_ms: 5,
            latency_jitter_ms: 20,
            faults: vec![ToolFault {
                kind: ToolErrorKind::Timeout,
                message: String::new(),
                subagent: None,
                main_round: None,
                round: Some(1),
                call_index: None,
                seeds: None,
                query: None,
            }],
            ..FakeTool::default()
        };
        let call = ToolCall { call_index: 0, tool_name: "t".into(), arguments: json!({"query": "x"}) };
        let mut ctx = ToolContext { subagent: "a".into(), main_round: 0, round: 0, seed: 1 };
        let r = t.call(&call, &ctx);
        let out = r.result.clone().unwrap();
        assert_eq!(out.chars().count(), 30);
        assert!(out.starts_with("result for x"));
        assert!((5..=25).contains(&r.latency_ms));
        assert_eq!(t.call(&call, &ctx), r);
        ctx.round = 1;
        assert_eq!(t.call(&call, &ctx).result.unwrap_err().kind, ToolErrorKind::Timeout);
    }

    #[test]
    fn scenario_parses_with_gateway_tool() {
        let s = Scenario::from_json_str(
            r#"{
              "task": {"id": "t1", "prompt": "echo X"},
              "replies": [{"role": "plan", "reply": {"kind": "finish"}}, {"role": "act", "reply": "not json"}],
              "tools": {
                "echo": {"output": "X"},
                "search": {"gateway": {"tiers": [{"schedule": ["timeout"], "after": "ok"}, {}, {}]}}
              }
            }"#,
        )
        .unwrap();
        let reg = s.registry(&BackoffPolicy::default()).unwrap();
        assert_eq!(reg.names().collect::<Vec<_>>(), vec!["echo", "search"]);
        assert_eq!(s.backend().replies.len(), 2);
        let err = Scenario::from_json_str("{\n\"task\": 3}").unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { line: 2, .. }));
    }
}
