//! Multi-source retrieval with ordered tier fallback and per-tier backoff.
//!
//! Sources are abstract; fault-injecting fakes drive the tests. All waits go
//! through a [`Clock`] so virtual time can be asserted exactly.

mod redundancy;
mod sanitize;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use redundancy::{filter_redundant, jaccard, shingles, DEFAULT_SHINGLE, DEFAULT_THRESHOLD};
pub use sanitize::{sanitize_query, MAX_QUERY_CHARS};

use crate::clock::{Clock, FakeClock};
use crate::scheduler::ToolCall;
use crate::tools::{Tool, ToolContext, ToolErrorKind, ToolResponse};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("query is empty after sanitization")]
    EmptyAfterSanitize,
    #[error("invalid tier configuration: {0}")]
    InvalidTiers(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceErrorKind {
    Timeout,
    MalformedQuery,
    NotFound,
    RateLimited,
    ParseFailure,
    Network,
}

impl SourceErrorKind {
    pub const ALL: [SourceErrorKind; 6] =
        [Self::Timeout, Self::MalformedQuery, Self::NotFound, Self::RateLimited, Self::ParseFailure, Self::Network];

    /// Transient failures are retried inside a tier; the rest move on.
    pub fn retryable(self) -> bool {
        matches!(self, Self::Timeout | Self::Network | Self::RateLimited)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Timeout => "timeout",
            Self::MalformedQuery => "malformed_query",
            Self::NotFound => "not_found",
            Self::RateLimited => "rate_limited",
            Self::ParseFailure => "parse_failure",
            Self::Network => "network",
        }
    }
}

impl fmt::Display for SourceErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<SourceErrorKind> for ToolErrorKind {
    fn from(k: SourceErrorKind) -> Self {
        match k {
            SourceErrorKind::Timeout => ToolErrorKind::Timeout,
            SourceErrorKind::MalformedQuery => ToolErrorKind::MalformedQuery,
            SourceErrorKind::NotFound => ToolErrorKind::NotFound,
            SourceErrorKind::RateLimited => ToolErrorKind::RateLimited,
            SourceErrorKind::ParseFailure => ToolErrorKind::ParseFailure,
            SourceErrorKind::Network => ToolErrorKind::Network,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub source: String,
    pub title: String,
    pub body: String,
}

/// A retrieval backend. `attempt` is 1-based within the current tier, which
/// lets fakes follow a fault schedule without shared mutable state.
pub trait SourceClient: Send + Sync {
    fn request(&self, query: &str, attempt: u32) -> Result<Document, SourceErrorKind>;
}

impl<F> SourceClient for F
where
    F: Fn(&str, u32) -> Result<Document, SourceErrorKind> + Send + Sync,
{
    fn request(&self, query: &str, attempt: u32) -> Result<Document, SourceErrorKind> {
        self(query, attempt)
    }
}

pub const DEFAULT_TIER_NAMES: [&str; 3] = ["structured-reader", "broad-search", "raw-fetch"];

#[derive(Clone)]
pub struct SourceTier {
    pub tier_index: usize,
    pub name: String,
    pub max_retries: u32,
    pub client: Arc<dyn SourceClient>,
}

impl fmt::Debug for SourceTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SourceTier")
            .field("tier_index", &self.tier_index)
            .field("name", &self.name)
            .field("max_retries", &self.max_retries)
            .finish_non_exhaustive()
    }
}

impl SourceTier {
    pub fn new(tier_index: usize, name: impl Into<String>, max_retries: u32, client: Arc<dyn SourceClient>) -> Self {
        Self { tier_index, name: name.into(), max_retries, client }
    }
}

pub fn validate_tiers(tiers: &[SourceTier]) -> Result<(), GatewayError> {
    if tiers.is_empty() {
        return Err(GatewayError::InvalidTiers("no tiers configured".into()));
    }
    for (i, t) in tiers.iter().enumerate() {
        if t.tier_index != i {
            return Err(GatewayError::InvalidTiers(format!(
                "tier at position {i} has index {}; indices must be contiguous from 0",
                t.tier_index
            )));
        }
        if t.max_retries == 0 {
            return Err(GatewayError::InvalidTiers(format!("tier {i} allows zero attempts")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackoffPolicy {
    pub base_delay_ms: u64,
    pub factor: f64,
    /// Attempts per tier, the first one included.
    pub max_retries: u32,
    pub jitter: bool,
    pub jitter_seed: u64,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        Self { base_delay_ms: 500, factor: 2.0, max_retries: 3, jitter: false, jitter_seed: 0 }
    }
}

impl BackoffPolicy {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.factor.is_finite() && self.factor > 1.0) {
            return Err(GatewayError::InvalidTiers(format!("backoff factor {} must exceed 1", self.factor)));
        }
        if self.max_retries == 0 {
            return Err(GatewayError::InvalidTiers("max_retries must be at least 1".into()));
        }
        Ok(())
    }

    /// Wait before retry `n` (n = 1 for the second attempt in a tier).
    pub fn delay_for_retry(&self, n: u32) -> u64 {
        assert!(n >= 1, "retry numbers start at 1");
        let exact = self.base_delay_ms as f64 * self.factor.powi(n as i32 - 1);
        exact.round().min(u64::MAX as f64) as u64
    }

    fn delay(&self, tier: usize, query: &str, n: u32) -> u64 {
        let d = self.delay_for_retry(n);
        if !self.jitter {
            return d;
        }
        let mut seed = self.jitter_seed ^ ((tier as u64) << 32) ^ u64::from(n);
        for b in query.bytes() {
            seed = seed.rotate_left(5) ^ u64::from(b);
        }
        let scale: f64 = ChaCha8Rng::seed_from_u64(seed).gen_range(0.5..1.0);
        (d as f64 * scale).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub tier: usize,
    /// 1-based within the tier.
    pub attempt: u32,
    /// `None` for the successful attempt.
    pub error: Option<SourceErrorKind>,
    pub delay_before_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub error_kind: SourceErrorKind,
    pub suggestion: String,
    pub attempts_log: Vec<AttemptRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchSuccess {
    pub document: Document,
    pub attempts_log: Vec<AttemptRecord>,
}

const FALLBACK_SUGGESTION: &str = "Retrieval failed; rephrase the query or try a different source.";

fn suggestion_table() -> &'static BTreeMap<String, String> {
    static TABLE: OnceLock<BTreeMap<String, String>> = OnceLock::new();
    TABLE.get_or_init(|| {
        serde_json::from_str(include_str!("suggestions.json")).expect("bundled suggestion table parses")
    })
}

pub fn suggestion_for(kind: SourceErrorKind) -> &'static str {
    suggestion_table()
        .get(kind.as_str())
        .map(String::as_str)
        .filter(|s| !s.trim().is_empty())
        .unwrap_or(FALLBACK_SUGGESTION)
}

/// Most frequent failure kind in the final tier of `log`; ties go to the kind
/// seen latest. An empty log (or one without failures) reports not_found.
pub fn diagnose(log: &[AttemptRecord]) -> Diagnostic {
    let kind = log
        .last()
        .map(|last| {
            let mut counts: BTreeMap<SourceErrorKind, (usize, usize)> = BTreeMap::new();
            for (pos, rec) in log.iter().enumerate().filter(|(_, r)| r.tier == last.tier) {
                if let Some(k) = rec.error {
                    let e = counts.entry(k).or_insert((0, 0));
                    e.0 += 1;
                    e.1 = pos;
                }
            }
            counts
                .into_iter()
                .max_by_key(|(_, (count, latest))| (*count, *latest))
                .map(|(k, _)| k)
                .unwrap_or(SourceErrorKind::NotFound)
        })
        .unwrap_or(SourceErrorKind::NotFound);
    Diagnostic { error_kind: kind, suggestion: suggestion_for(kind).to_string(), attempts_log: log.to_vec() }
}

/// Try each tier in order. Retryable errors are retried within the tier up to
/// its attempt budget with exponential waits; other errors move to the next
/// tier at once. Never panics on source failure.
pub fn fetch(
    query: &str,
    tiers: &[SourceTier],
    policy: &BackoffPolicy,
    clock: &dyn Clock,
) -> Result<FetchSuccess, Diagnostic> {
    let mut log = Vec::new();
    for tier in tiers {
        let mut attempt = 1;
        loop {
            let delay = if attempt > 1 {
                let d = policy.delay(tier.tier_index, query, attempt - 1);
                clock.sleep_ms(d);
                d
            } else {
                0
            };
            let result = tier.client.request(query, attempt);
            log.push(AttemptRecord {
                tier: tier.tier_index,
                attempt,
                error: result.as_ref().err().copied(),
                delay_before_ms: delay,
            });
            match result {
                Ok(document) => return Ok(FetchSuccess { document, attempts_log: log }),
                Err(kind) if kind.retryable() && attempt < tier.max_retries => attempt += 1,
                Err(_) => break,
            }
        }
    }
    Err(diagnose(&log))
}

/// Sanitizing front end over a fixed tier chain.
#[derive(Clone)]
pub struct Gateway {
    tiers: Vec<SourceTier>,
    policy: BackoffPolicy,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway").field("tiers", &self.tiers).field("policy", &self.policy).finish()
    }
}

impl Gateway {
    pub fn new(tiers: Vec<SourceTier>, policy: BackoffPolicy) -> Result<Self, GatewayError> {
        validate_tiers(&tiers)?;
        policy.validate()?;
        Ok(Self { tiers, policy })
    }

    /// Build the default three-tier chain from fakes, one per tier.
    pub fn from_fakes(sources: Vec<FakeSource>, policy: BackoffPolicy) -> Result<Self, GatewayError> {
        let tiers = sources
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let name = s.name.clone().unwrap_or_else(|| {
                    DEFAULT_TIER_NAMES.get(i).map_or_else(|| format!("tier-{i}"), |n| n.to_string())
                });
                let retries = s.max_retries.unwrap_or(policy.max_retries);
                SourceTier::new(i, name, retries, Arc::new(s))
            })
            .collect();
        Self::new(tiers, policy)
    }

    pub fn tiers(&self) -> &[SourceTier] {
        &self.tiers
    }

    pub fn policy(&self) -> &BackoffPolicy {
        &self.policy
    }

    pub fn max_attempts(&self) -> u32 {
        self.tiers.iter().map(|t| t.max_retries).sum()
    }

    pub fn fetch(&self, raw_query: &str, clock: &dyn Clock) -> Result<FetchSuccess, Diagnostic> {
        let query = match sanitize_query(raw_query) {
            Ok(q) => q,
            Err(_) => {
                return Err(Diagnostic {
                    error_kind: SourceErrorKind::MalformedQuery,
                    suggestion: suggestion_for(SourceErrorKind::MalformedQuery).to_string(),
                    attempts_log: Vec::new(),
                })
            }
        };
        fetch(&query, &self.tiers, &self.policy, clock)
    }
}

/// One step of a scripted fault schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultStep {
    Ok,
    Timeout,
    MalformedQuery,
    NotFound,
    RateLimited,
    ParseFailure,
    Network,
}

impl FaultStep {
    pub fn error(self) -> Option<SourceErrorKind> {
        match self {
            Self::Ok => None,
            Self::Timeout => Some(SourceErrorKind::Timeout),
            Self::MalformedQuery => Some(SourceErrorKind::MalformedQuery),
            Self::NotFound => Some(SourceErrorKind::NotFound),
            Self::RateLimited => Some(SourceErrorKind::RateLimited),
            Self::ParseFailure => Some(SourceErrorKind::ParseFailure),
            Self::Network => Some(SourceErrorKind::Network),
        }
    }
}

impl From<SourceErrorKind> for FaultStep {
    fn from(k: SourceErrorKind) -> Self {
        match k {
            SourceErrorKind::Timeout => Self::Timeout,
            SourceErrorKind::MalformedQuery => Self::MalformedQuery,
            SourceErrorKind::NotFound => Self::NotFound,
            SourceErrorKind::RateLimited => Self::RateLimited,
            SourceErrorKind::ParseFailure => Self::ParseFailure,
            SourceErrorKind::Network => Self::Network,
        }
    }
}

fn default_after() -> FaultStep {
    FaultStep::Ok
}

/// Fault-injecting source. Attempt `n` follows `schedule[n-1]`, then `after`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FakeSource {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub max_retries: Option<u32>,
    #[serde(default)]
    pub schedule: Vec<FaultStep>,
    #[serde(default = "default_after")]
    pub after: FaultStep,
    /// Canned bodies keyed by sanitized query.
    #[serde(default)]
    pub documents: BTreeMap<String, String>,
}

impl FakeSource {
    pub fn new(schedule: Vec<FaultStep>, after: FaultStep) -> Self {
        Self { name: None, max_retries: None, schedule, after, documents: BTreeMap::new() }
    }

    pub fn always(step: FaultStep) -> Self {
        Self::new(Vec::new(), step)
    }

    pub fn with_document(mut self, query: impl Into<String>, body: impl Into<String>) -> Self {
        self.documents.insert(query.into(), body.into());
        self
    }

    fn step(&self, attempt: u32) -> FaultStep {
        self.schedule.get(attempt.saturating_sub(1) as usize).copied().unwrap_or(self.after)
    }
}

impl SourceClient for FakeSource {
    fn request(&self, query: &str, attempt: u32) -> Result<Document, SourceErrorKind> {
        if let Some(kind) = self.step(attempt).error() {
            return Err(kind);
        }
        let source = self.name.clone().unwrap_or_else(|| "fake".to_string());
        let body = self.documents.get(query).cloned().unwrap_or_else(|| format!("{source} result for: {query}"));
        Ok(Document { source, title: query.to_string(), body })
    }
}

/// Exposes a [`Gateway`] as a tool. Arguments: `{"query": ..}` or
/// `{"queries": [..]}`. Backoff waits become the reported latency.
#[derive(Debug, Clone)]
pub struct GatewayTool {
    gateway: Gateway,
}

impl GatewayTool {
    pub fn new(gateway: Gateway) -> Self {
        Self { gateway }
    }

    fn queries(args: &Value) -> Vec<String> {
        if let Some(q) = args.get("query").and_then(Value::as_str) {
            return vec![q.to_string()];
        }
        match args.get("queries").and_then(Value::as_array) {
            Some(qs) => qs.iter().filter_map(Value::as_str).map(str::to_string).collect(),
            None => match args.as_str() {
                Some(q) => vec![q.to_string()],
                None => Vec::new(),
            },
        }
    }
}

impl Tool for GatewayTool {
    fn call(&self, call: &ToolCall, _ctx: &ToolContext) -> ToolResponse {
        let queries = Self::queries(&call.arguments);
        if queries.is_empty() {
            return ToolResponse::err(
                ToolErrorKind::MalformedQuery,
                suggestion_for(SourceErrorKind::MalformedQuery),
                0,
            );
        }
        let clock = FakeClock::new();
        let mut docs = Vec::new();
        let mut last_failure = None;
        for q in &queries {
            match self.gateway.fetch(q, &clock) {
                Ok(s) => docs.push(s.document),
                Err(d) => last_failure = Some(d),
            }
        }
        let latency = clock.now_ms();
        if docs.is_empty() {
            let d = last_failure.expect("no documents implies a failure");
            let message = format!("{} ({} attempts): {}", d.error_kind, d.attempts_log.len(), d.suggestion);
            return ToolResponse::err(d.error_kind.into(), message, latency);
        }
        let docs = filter_redundant(&docs);
        let text =
            docs.iter().map(|d| format!("[{}] {}\n{}", d.source, d.title, d.body)).collect::<Vec<_>>().join("\n\n");
        ToolResponse::ok(text, latency)
    }
}
