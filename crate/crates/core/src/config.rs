//! Kernel configuration: one JSON document, every field defaulted, any field
//! overridable by its dotted path (`ledger.tau_max=5000`).

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{BackoffPolicy, DEFAULT_TIER_NAMES};
use crate::ledger::LedgerConfig;
use crate::memory::MemoryConfig;
use crate::model::GenerationOptions;
use crate::perception::DEFAULT_MAX_DEPTH;
use crate::runtime::{DEFAULT_MAIN_ROUNDS, DEFAULT_WORKER_ROUNDS};
use crate::scheduler::{DEFAULT_ENSEMBLE_CAP, MAX_BATCH_CALLS};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("override `{0}`: expected dotted.path=value")]
    BadOverride(String),
    #[error("override `{path}` does not name a config field")]
    UnknownField { path: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ConfigError {
    fn parse(e: serde_json::Error) -> Self {
        Self::Parse { line: e.line(), column: e.column(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub ensemble_cap: usize,
    pub batch_cap: usize,
    /// Simulated per-call deadline.
    pub tool_timeout_ms: u64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self { ensemble_cap: DEFAULT_ENSEMBLE_CAP, batch_cap: MAX_BATCH_CALLS, tool_timeout_ms: 30_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub tiers: Vec<String>,
    pub backoff: BackoffPolicy,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self { tiers: DEFAULT_TIER_NAMES.iter().map(|s| s.to_string()).collect(), backoff: BackoffPolicy::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeConfig {
    pub max_main_rounds: u32,
    pub max_worker_rounds: u32,
    pub reasoning: bool,
    pub seed: u64,
    /// Virtual milliseconds charged per model call.
    pub model_call_ms: u64,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        let gen = GenerationOptions::default();
        Self {
            max_main_rounds: DEFAULT_MAIN_ROUNDS,
            max_worker_rounds: DEFAULT_WORKER_ROUNDS,
            reasoning: false,
            seed: 0,
            model_call_ms: 1,
            temperature: gen.temperature,
            max_output_tokens: gen.max_output_tokens,
        }
    }
}

impl RuntimeConfig {
    pub fn generation(&self) -> GenerationOptions {
        GenerationOptions { temperature: self.temperature, max_output_tokens: self.max_output_tokens }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub attempts: u32,
    pub processes: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self { attempts: 3, processes: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionConfig {
    pub max_depth: u32,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self { max_depth: DEFAULT_MAX_DEPTH }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub ledger: LedgerConfig,
    pub memory: MemoryConfig,
    pub scheduler: SchedulerConfig,
    pub gateway: GatewayConfig,
    pub runtime: RuntimeConfig,
    pub harness: HarnessConfig,
    pub perception: PerceptionConfig,
}

fn check(ok: bool, what: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Invalid(what.to_string()))
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.ledger.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let m = &self.memory;
        check(m.k >= 1, "memory.k must be at least 1")?;
        check((-1.0..=1.0).contains(&m.theta_read), "memory.theta_read must lie in [-1, 1]")?;
        check((-1.0..=1.0).contains(&m.theta_dup), "memory.theta_dup must lie in [-1, 1]")?;
        check(m.dup_count >= 1, "memory.dup_count must be at least 1")?;
        check(m.dimension >= 1, "memory.dimension must be at least 1")?;
        let s = &self.scheduler;
        check(s.ensemble_cap >= 1, "scheduler.ensemble_cap must be at least 1")?;
        check(s.batch_cap >= 1, "scheduler.batch_cap must be at least 1")?;
        check(s.tool_timeout_ms >= 1, "scheduler.tool_timeout_ms must be positive")?;
        check(!self.gateway.tiers.is_empty(), "gateway.tiers must name at least one tier")?;
        self.gateway.backoff.validate().map_err(|e| ConfigError::Invalid(format!("gateway.backoff: {e}")))?;
        check(self.gateway.backoff.base_delay_ms >= 1, "gateway.backoff.base_delay_ms must be positive")?;
        let r = &self.runtime;
        check(r.max_main_rounds >= 1, "runtime.max_main_rounds must be at least 1")?;
        check(r.max_worker_rounds >= 1, "runtime.max_worker_rounds must be at least 1")?;
        check(r.temperature.is_finite() && r.temperature >= 0.0, "runtime.temperature must be non-negative")?;
        check(self.harness.attempts >= 1, "harness.attempts must be at least 1")?;
        check(self.harness.processes >= 1, "harness.processes must be at least 1")?;
        check(self.perception.max_depth >= 1, "perception.max_depth must be at least 1")?;
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_value_str(text, &[])
    }

    /// Parse `text` (empty means all defaults), apply overrides, validate.
    pub fn from_value_str(text: &str, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut value: Value = if text.trim().is_empty() {
            Value::Object(Default::default())
        } else {
            serde_json::from_str(text).map_err(ConfigError::parse)?
        };
        for (path, raw) in overrides {
            apply_override(&mut value, path, raw)?;
        }
        let config: KernelConfig = serde_json::from_value(value).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|source| ConfigError::Io { path: p.display().to_string(), source })?,
            None => String::new(),
        };
        Self::from_value_str(&text, overrides)
    }

    /// Deep-merge a partial config document over this one.
    pub fn with_overlay(&self, overlay: &Value) -> Result<Self, ConfigError> {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        merge(&mut doc, overlay);
        let config: KernelConfig = serde_json::from_value(doc).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Apply dotted-path overrides to an already built config.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let text = serde_json::to_string(self).expect("config serializes");
        Self::from_value_str(&text, overrides)
    }
}

fn merge(base: &mut Value, overlay: &Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// Split `a.b=value` into its path and value.
pub fn parse_override(s: &str) -> Result<(String, String), ConfigError> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.to_string())),
        _ => Err(ConfigError::BadOverride(s.to_string())),
    }
}

/// Set the field at `path` to `raw`, read as JSON when it parses and as a
/// string otherwise. Only existing fields of the default document can be set.
pub fn apply_override(doc: &mut Value, path: &str, raw: &str) -> Result<(), ConfigError> {
    let defaults = serde_json::to_value(KernelConfig::default()).expect("config serializes");
    let unknown = || ConfigError::UnknownField { path: path.to_string() };
    let parts: Vec<&str> = path.split('.').collect();
    let mut probe = &defaults;
    for p in &parts {
        probe = probe.get(p).ok_or_else(unknown)?;
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cursor = doc;
    for (i, p) in parts.iter().enumerate() {
        let obj = cursor.as_object_mut().ok_or_else(unknown)?;
        if i == parts.len() - 1 {
            obj.insert(p.to_string(), value);
            return Ok(());
        }
        cursor = obj.entry(p.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(unknown())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = KernelConfig::from_json_str("").unwrap();
        assert_eq!(c, KernelConfig::default());
        assert_eq!(c.scheduler.batch_cap, 5);
        assert_eq!((c.runtime.max_main_rounds, c.runtime.max_worker_rounds), (10, 20));
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(KernelConfig::from_json_str(&text).unwrap(), c);
    }

    #[test]
    fn partial_document_fills_defaults() {
        let c = KernelConfig::from_json_str(
            r#"{"ledger": {"tau_max": 100, "tau_multi": 300, "tau_context": 1000, "summary_cap": 50}}"#,
        )
        .unwrap();
        assert_eq!(c.ledger.tau_max, 100);
        assert_eq!(c.memory, MemoryConfig::default());
    }

    #[test]
    fn dotted_overrides() {
        let o = vec![
            parse_override("ledger.tau_max=5000").unwrap(),
            parse_override("runtime.reasoning=true").unwrap(),
            parse_override("memory.store_path=/tmp/m.jsonl").unwrap(),
        ];
        let c = KernelConfig::load(None, &o).unwrap();
        assert_eq!(c.ledger.tau_max, 5000);
        assert!(c.runtime.reasoning);
        assert_eq!(c.memory.store_path.as_deref(), Some(Path::new("/tmp/m.jsonl")));
        let bad = vec![("ledger.nope".to_string(), "1".to_string())];
        assert!(matches!(KernelConfig::load(None, &bad), Err(ConfigError::UnknownField { .. })));
        assert!(parse_override("no-equals").is_err());
    }

    #[test]
    fn overlay_merges_nested_fields() {
        let base = KernelConfig::default();
        let c = base.with_overlay(&serde_json::json!({"runtime": {"seed": 7}, "memory": {"k": 3}})).unwrap();
        assert_eq!((c.runtime.seed, c.memory.k), (7, 3));
        assert_eq!(c.runtime.max_main_rounds, 10);
        assert!(base.with_overlay(&serde_json::json!({"runtime": {"nope": 1}})).is_err());
    }

    #[test]
    fn errors_are_line_precise_and_validated() {
        let err = KernelConfig::from_json_str("{\n  \"ledger\": {\n    \"tau_max\": ,\n  }\n}").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 3, .. }), "{err}");
        assert!(KernelConfig::from_json_str(r#"{"ledger": {"tau_max": 0}}"#).is_err());
        assert!(KernelConfig::from_json_str(r#"{"scheduler": {"batch_cap": 0}}"#).is_err());
        assert!(KernelConfig::from_json_str(r#"{"bogus": 1}"#).is_err());
    }
}
