#![allow(dead_code)]

use orchestrator_core::config::KernelConfig;
use orchestrator_core::memory::MemoryStore;
use orchestrator_core::runtime::{run_task, RunFailure, RunOutput};
use orchestrator_core::scenario::Scenario;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn scenario(v: Value) -> Scenario {
    serde_json::from_value(v).expect("test scenario parses")
}

/// Config after the scenario's overlay, with `seed` set.
pub fn config_for(s: &Scenario, seed: u64) -> KernelConfig {
    let mut c = match &s.config {
        Some(o) => KernelConfig::default().with_overlay(o).expect("overlay valid"),
        None => KernelConfig::default(),
    };
    c.runtime.seed = seed;
    c
}

pub fn run_with(s: &Scenario, config: &KernelConfig, store: &MemoryStore) -> Result<RunOutput, RunFailure> {
    s.seed_memory(store).expect("seeds valid");
    let registry = s.registry(&config.gateway.backoff).expect("tools valid");
    run_task(&s.task, config, &s.backend(), &registry, store)
}

pub fn run(s: &Scenario, seed: u64) -> Result<RunOutput, RunFailure> {
    let config = config_for(s, seed);
    let store = MemoryStore::in_memory(config.memory.clone());
    run_with(s, &config, &store)
}

/// One plan, one subagent, one answer. The classic "echo X" task.
pub fn echo_scenario(x: &str) -> Scenario {
    scenario(json!({
        "task": {"id": format!("echo-{x}"), "prompt": format!("echo {x}")},
        "expected_answer": x,
        "replies": [
            {"role": "plan", "reply": {"kind": "route", "subtasks": [{"id": "a", "prompt": format!("say {x}")}]}},
            {"role": "act", "reply": {"kind": "answer", "text": x}},
            {"role": "summarize", "reply": {"kind": "summary", "text": format!("answered {x}")}},
            {"role": "aggregate", "reply": {"kind": "final", "confidence": 0.8}},
            {"role": "extract", "reply": {"kind": "skills", "entries": []}}
        ]
    }))
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    &items[rng.gen_range(0..items.len())]
}

/// A scenario exercising most of the kernel: several main rounds, parallel
/// subagents, oversized and invalid batches, unknown tools, injected tool
/// faults, latency jitter, a gateway tool, small ledger thresholds so every
/// compression tier fires, and failing summarizers.
pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut replies: Vec<Value> = Vec::new();
    let main_rounds = rng.gen_range(1..=3u32);
    let worker_cap = rng.gen_range(2..=6u32);
    for mr in 0..main_rounds {
        if rng.gen_bool(0.1) && mr + 1 < main_rounds {
            replies.push(json!({"role": "plan", "main_round": mr, "reply": "not json at all"}));
            continue;
        }
        let n = rng.gen_range(1..=4usize);
        let subtasks: Vec<Value> = (0..n)
            .map(|j| {
                let mut s = json!({"id": format!("w{mr}_{j}"), "prompt": format!("subtask {j} of round {mr}")});
                if rng.gen_bool(0.3) {
                    s["tools"] = json!(["search"]);
                }
                s
            })
            .collect();
        let last = mr + 1 == main_rounds;
        replies.push(json!({"role": "plan", "main_round": mr, "reply": {
            "kind": "route", "subtasks": subtasks, "rationale": format!("round {mr}"), "resolves": last}}));
        for j in 0..n {
            let id = format!("w{mr}_{j}");
            let rounds = rng.gen_range(1..=worker_cap + 1);
            for r in 0..rounds {
                if rng.gen_bool(0.01) {
                    replies.push(
                        json!({"role": "act", "subagent": id, "main_round": mr, "round": r, "fail": "model outage"}),
                    );
                    continue;
                }
                let reply = if r + 1 == rounds {
                    json!({"kind": "answer", "text": format!("answer-{mr}-{j}"), "verify": rng.gen_bool(0.6)})
                } else if rng.gen_bool(0.08) {
                    json!("{\"kind\": \"tools\"")
                } else {
                    let calls = rng.gen_range(1..=6usize);
                    let calls: Vec<Value> = (0..calls)
                        .map(|c| {
                            let tool = *pick(&mut rng, &["search", "search", "fetch", "web", "bogus"]);
                            json!({"tool": tool, "args": {"query": format!("q{mr}-{j}-{r}-{c}")}})
                        })
                        .collect();
                    json!({"kind": "tools", "calls": calls})
                };
                replies.push(json!({"role": "act", "subagent": id, "main_round": mr, "round": r, "reply": reply}));
            }
            let verdict = *pick(&mut rng, &["accepted", "accepted", "retry", "rejected"]);
            replies.push(json!({"role": "verify", "subagent": id, "main_round": mr,
                "reply": {"kind": "verdict", "outcome": verdict, "note": "checked"}}));
            if rng.gen_bool(0.25) {
                replies.push(json!({"role": "summarize", "subagent": id, "main_round": mr, "fail": "summarizer down"}));
            }
        }
    }
    // catch-alls for states the per-round script does not pin down
    replies.push(json!({"role": "act", "reply": {"kind": "answer", "text": "fallback"}}));
    replies.push(json!({"role": "verify", "reply": {"kind": "verdict", "outcome": "accepted"}}));
    replies.push(json!({"role": "summarize", "reply": {"kind": "summary", "text": "worked through the subtask"}}));
    if rng.gen_bool(0.7) {
        replies.push(json!({"role": "compress", "reply": {"kind": "summary", "text": "compressed tool records"}}));
    }
    replies.push(json!({"role": "aggregate", "reply": {"kind": "final",
        "confidence": rng.gen_range(0.0..1.5f64)}}));
    if rng.gen_bool(0.8) {
        replies.push(json!({"role": "extract", "reply": {"kind": "skills", "entries": [
            {"kind": "decision_rule", "skill_text": format!("rule learned from scenario {seed}")}]}}));
    }
    let reasoning = rng.gen_bool(0.3);
    if reasoning {
        replies.push(json!({"role": "reason", "reply": {"kind": "intent", "note": "wants a short answer"}}));
    }
    let faults: Vec<Value> = (0..rng.gen_range(0..3))
        .map(|_| {
            let kind = *pick(&mut rng, &["timeout", "network", "rate_limited", "internal"]);
            json!({"kind": kind, "round": rng.gen_range(0..3u32)})
        })
        .collect();
    let tier_step = |rng: &mut ChaCha8Rng| *pick(rng, &["ok", "timeout", "network", "not_found", "rate_limited"]);
    let tiers: Vec<Value> = ["structured-reader", "broad-search", "raw-fetch"]
        .iter()
        .map(|name| {
            let schedule: Vec<&str> = (0..rng.gen_range(0..3)).map(|_| tier_step(&mut rng)).collect();
            json!({"name": name, "schedule": schedule, "after": tier_step(&mut rng)})
        })
        .collect();
    scenario(json!({
        "task": {"id": format!("random-{seed}"), "prompt": format!("randomized task number {seed}"),
                 "deadline_rounds_main": rng.gen_range(1..=10u32)},
        "replies": replies,
        "tools": {
            "search": {"output": "result for {query} ", "output_len": rng.gen_range(50..1200usize),
                       "latency_ms": 20, "latency_jitter_ms": 30},
            "fetch": {"output": "page {query} ", "output_len": rng.gen_range(200..2500usize), "faults": faults},
            "web": {"gateway": {"tiers": tiers, "backoff": {"base_delay_ms": 5}}}
        },
        "memory": [{"kind": "technical_insight", "skill_text": format!("randomized task number {seed} needs care")}],
        "config": {
            "ledger": {"tau_max": 300, "tau_multi": 700, "tau_context": 1500, "summary_cap": 150},
            "runtime": {"max_worker_rounds": worker_cap, "reasoning": reasoning},
            "scheduler": {"tool_timeout_ms": 45}
        }
    }))
}
