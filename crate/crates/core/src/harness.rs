//! pass@k batch harness.
//!
//! Each task runs up to `attempts` times with seeds `seed + i`, stopping at
//! the first pass. Up to `processes` tasks are in flight at once. Every task
//! works on its own fork of the memory store, so attempts of one task see
//! each other's write-backs but never another task's; the admitted entries
//! are merged into the shared store in task order once all tasks finish.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::KernelConfig;
use crate::memory::{MemoryEntry, MemoryStore};
use crate::runtime::{run_task, AnswerStatus};
use crate::scenario::{Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario set line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("scenario {index}: {source}")]
    Scenario {
        index: usize,
        #[source]
        source: ScenarioError,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum SetItem {
    Path(PathBuf),
    Inline(Box<Scenario>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SetFile {
    scenarios: Vec<SetItem>,
}

/// Load a scenario set: `{"scenarios": [...]}` where each item is a scenario
/// object or a path relative to the set file.
pub fn load_set(path: &Path) -> Result<Vec<Scenario>, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| HarnessError::Io { path: path.display().to_string(), source })?;
    let set: SetFile = serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    set.scenarios
        .into_iter()
        .enumerate()
        .map(|(index, item)| match item {
            SetItem::Inline(s) => Ok(*s),
            SetItem::Path(p) => {
                Scenario::load(&base.join(p)).map_err(|source| HarnessError::Scenario { index, source })
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptResult {
    pub attempt: u32,
    pub seed: u64,
    pub trace_id: Option<String>,
    pub answer: Option<String>,
    pub status: Option<AnswerStatus>,
    pub error: Option<String>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task_id: String,
    pub attempts: Vec<AttemptResult>,
    /// 1-based attempt that first passed.
    pub first_pass: Option<u32>,
}

impl TaskReport {
    pub fn passed_within(&self, k: u32) -> bool {
        self.first_pass.is_some_and(|a| a <= k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Start,
    End,
}

/// One entry of the concurrency log. `tick` is a logical clock shared by
/// all workers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapEntry {
    pub tick: u64,
    pub task: usize,
    pub phase: Phase,
    pub in_flight: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassAtKReport {
    pub attempts: u32,
    pub processes: usize,
    pub tasks: Vec<TaskReport>,
    pub merged_entries: usize,
    #[serde(skip)]
    pub overlap_log: Vec<OverlapEntry>,
    #[serde(skip)]
    pub max_in_flight: usize,
}

impl PassAtKReport {
    pub fn passes_at(&self, k: u32) -> usize {
        self.tasks.iter().filter(|t| t.passed_within(k)).count()
    }

    /// Plain-text table: one row per task, then pass@1..pass@k totals.
    pub fn render_table(&self) -> String {
        let k = self.attempts;
        let width = self.tasks.iter().map(|t| t.task_id.len()).max().unwrap_or(4).max(4);
        let mut out = format!("{:<width$}  first_pass", "task");
        for j in 1..=k {
            out.push_str(&format!("  pass@{j}"));
        }
        out.push('\n');
        for t in &self.tasks {
            let first = t.first_pass.map_or("-".to_string(), |a| a.to_string());
            out.push_str(&format!("{:<width$}  {:>10}", t.task_id, first));
            for j in 1..=k {
                let cell = if t.passed_within(j) { "1" } else { "0" };
                out.push_str(&format!("  {:>width$}", cell, width = format!("pass@{j}").len()));
            }
            out.push('\n');
        }
        let n = self.tasks.len();
        for j in 1..=k {
            out.push_str(&format!("pass@{j} = {}/{n}\n", self.passes_at(j)));
        }
        out
    }
}

fn attempt_passes(expected: Option<&str>, answer: &str, status: AnswerStatus) -> bool {
    status == AnswerStatus::Completed && expected.is_some_and(|e| e.trim() == answer.trim())
}

/// A task's report plus every entry its attempts admitted to the fork.
type TaskResult = (TaskReport, Vec<MemoryEntry>);

fn run_one_task(scenario: &Scenario, base: &KernelConfig, store: &MemoryStore, attempts: u32) -> TaskResult {
    let mut report = TaskReport { task_id: scenario.task.id.clone(), attempts: Vec::new(), first_pass: None };
    let fail = |report: &mut TaskReport, attempt: u32, seed: u64, error: String| {
        report.attempts.push(AttemptResult {
            attempt,
            seed,
            trace_id: None,
            answer: None,
            status: None,
            error: Some(error),
            passed: false,
        });
    };
    let config = match &scenario.config {
        Some(overlay) => base.with_overlay(overlay),
        None => Ok(base.clone()),
    };
    let fork = store.fork();
    let prepared = config.map_err(|e| e.to_string()).and_then(|config| {
        scenario.seed_memory(&fork).map_err(|e| e.to_string())?;
        let registry = scenario.registry(&config.gateway.backoff).map_err(|e| e.to_string())?;
        Ok((config, registry))
    });
    let (config, registry) = match prepared {
        Ok(p) => p,
        Err(e) => {
            fail(&mut report, 1, base.runtime.seed, e);
            return (report, Vec::new());
        }
    };
    let backend = scenario.backend();
    let mut written = Vec::new();
    for i in 0..attempts {
        let mut cfg = config.clone();
        cfg.runtime.seed = config.runtime.seed.wrapping_add(u64::from(i));
        let seed = cfg.runtime.seed;
        match run_task(&scenario.task, &cfg, &backend, &registry, &fork) {
            Ok(out) => {
                let passed = attempt_passes(scenario.expected_answer.as_deref(), &out.answer.answer, out.answer.status);
                written.extend(out.stored);
                report.attempts.push(AttemptResult {
                    attempt: i + 1,
                    seed,
                    trace_id: Some(out.answer.trace_id),
                    answer: Some(out.answer.answer),
                    status: Some(out.answer.status),
                    error: None,
                    passed,
                });
                if passed {
                    report.first_pass = Some(i + 1);
                    break;
                }
            }
            Err(f) => fail(&mut report, i + 1, seed, f.error.to_string()),
        }
    }
    (report, written)
}

/// Run every scenario under pass@`attempts` with at most `processes` tasks
/// in flight, then merge write-backs into `store` in task order.
pub fn run_pass_at_k(
    scenarios: &[Scenario],
    config: &KernelConfig,
    store: &MemoryStore,
    attempts: u32,
    processes: usize,
) -> PassAtKReport {
    let processes = processes.max(1);
    let next = AtomicUsize::new(0);
    let tick = AtomicU64::new(0);
    let in_flight = AtomicUsize::new(0);
    let log = Mutex::new(Vec::new());
    let results: Mutex<Vec<Option<TaskResult>>> = Mutex::new(vec![None; scenarios.len()]);
    let note = |task: usize, phase: Phase, delta: isize| {
        let mut log = log.lock().expect("overlap log poisoned");
        let now = if delta > 0 {
            in_flight.fetch_add(1, Ordering::SeqCst) + 1
        } else {
            in_flight.fetch_sub(1, Ordering::SeqCst) - 1
        };
        log.push(OverlapEntry { tick: tick.fetch_add(1, Ordering::SeqCst), task, phase, in_flight: now });
    };
    thread::scope(|scope| {
        for _ in 0..processes.min(scenarios.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(scenario) = scenarios.get(i) else { break };
                note(i, Phase::Start, 1);
                let r = run_one_task(scenario, config, store, attempts);
                note(i, Phase::End, -1);
                results.lock().expect("results poisoned")[i] = Some(r);
            });
        }
    });
    let mut tasks = Vec::with_capacity(scenarios.len());
    let mut merged_entries = 0;
    for (report, written) in results.into_inner().expect("results poisoned").into_iter().flatten() {
        for entry in written {
            // a failed merge leaves the entry out; the task result stands
            if matches!(store.store(entry), Ok(d) if d.stored) {
                merged_entries += 1;
            }
        }
        tasks.push(report);
    }
    let overlap_log = log.into_inner().expect("overlap log poisoned");
    let max_in_flight = overlap_log.iter().map(|e| e.in_flight).max().unwrap_or(0);
    PassAtKReport { attempts, processes, tasks, merged_entries, overlap_log, max_in_flight }
}
