mod common;

use orchestrator_core::ledger::{
    char_len, head_tail, ContextLedger, LedgerConfig, SummarizerUnavailable, SummaryRequest,
};
use orchestrator_core::memory::{MemoryConfig, MemoryStore, SkillKind};
use orchestrator_core::model::Message;
use orchestrator_core::scheduler::{validate_batch, ToolBatch, ToolCall};
use orchestrator_core::trace::Trace;
use proptest::prelude::*;
use serde_json::Value;

#[derive(Debug, Clone)]
enum Op {
    Tool { query: String, len: usize },
    Note(String),
    Close,
    Compress,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => ("[a-z ]{0,20}", 0usize..2_500).prop_map(|(query, len)| Op::Tool { query, len }),
        1 => "[a-zé ]{0,300}".prop_map(Op::Note),
        2 => Just(Op::Close),
        1 => Just(Op::Compress),
    ]
}

fn ledger_config() -> impl Strategy<Value = LedgerConfig> {
    (20usize..800, 1usize..4, 1usize..4, 1usize..200).prop_map(|(tau_max, m, c, cap)| {
        let tau_multi = tau_max * (m + 1);
        LedgerConfig { tau_max, tau_multi, tau_context: tau_multi * (c + 1), summary_cap: cap.min(tau_max) }
    })
}

fn summarizer(fail: bool) -> impl Fn(&SummaryRequest) -> Result<String, SummarizerUnavailable> {
    move |req: &SummaryRequest| {
        if fail {
            Err(SummarizerUnavailable("off".into()))
        } else {
            Ok("k".repeat(req.cap + 5))
        }
    }
}

fn total(messages: &[Message]) -> usize {
    messages.iter().map(Message::char_len).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ledger_stays_within_budget(config in ledger_config(), ops in prop::collection::vec(op(), 1..120), fail: bool) {
        let s = summarizer(fail);
        let mut ledger = ContextLedger::new(config).unwrap();
        for op in ops {
            match op {
                Op::Tool { query, len } => {
                    let r = ledger.record_tool_result("t", &query, &"x".repeat(len));
                    prop_assert_eq!(r.truncated, len > config.tau_max);
                }
                Op::Note(t) => {
                    ledger.record_note(&t);
                }
                Op::Close => {
                    ledger.close_round(&s);
                }
                Op::Compress => {
                    let r = ledger.compress_history(&s);
                    if !r.replaced.is_empty() {
                        prop_assert!(r.after < r.before);
                        prop_assert_eq!(r.registry_after, 0);
                    }
                }
            }
            ledger.enforce_budget(&s);
            prop_assert!(ledger.total_chars() <= config.tau_context + config.summary_cap);
            prop_assert!(ledger.registry_is_exact());
        }
    }

    #[test]
    fn rendered_context_fits_budget(config in ledger_config(), ops in prop::collection::vec(op(), 1..60), extra in 0usize..3_000) {
        let s = summarizer(false);
        let mut ledger = ContextLedger::new(config).unwrap();
        for op in ops {
            match op {
                Op::Tool { query, len } => { ledger.record_tool_result("t", &query, &"x".repeat(len)); }
                Op::Note(t) => { ledger.record_note(&t); }
                Op::Close => { ledger.close_round(&s); }
                Op::Compress => { ledger.compress_history(&s); }
            }
        }
        let budget = config.summary_cap + extra;
        let messages = ledger.render_context(budget).unwrap();
        prop_assert!(total(&messages) <= budget);
        if !ledger.records().is_empty() {
            prop_assert!(!messages.is_empty());
        }
    }

    #[test]
    fn head_tail_respects_cap(text in "\\PC{0,400}", cap in 0usize..200) {
        let out = head_tail(&text, cap);
        prop_assert!(char_len(&out) <= cap);
        if char_len(&text) <= cap {
            prop_assert_eq!(out, text);
        }
    }

    #[test]
    fn batch_validation_matches_definition(indices in prop::collection::vec(0usize..9, 0..9)) {
        let n = indices.len();
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        let permutation = sorted.iter().enumerate().all(|(i, &x)| i == x);
        let batch = ToolBatch {
            calls: indices.into_iter().map(|call_index| ToolCall { call_index, tool_name: "t".into(), arguments: Value::Null }).collect(),
            issued_by: "a".into(),
            round: 0,
        };
        prop_assert_eq!(validate_batch(batch).is_ok(), (1..=5).contains(&n) && permutation);
    }
}

const WORDS: [&str; 12] =
    ["audio", "clip", "song", "map", "street", "crop", "retry", "search", "pdf", "table", "date", "city"];

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS.to_vec()), 1..8).prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn retrieval_is_sorted_thresholded_and_bounded(
        texts in prop::collection::vec(sentence(), 0..80),
        query in sentence(),
        k in 0usize..10,
        theta in 0.0f64..1.0,
    ) {
        let store = MemoryStore::in_memory(MemoryConfig::default());
        for (i, t) in texts.iter().enumerate() {
            let e = store.make_entry(format!("e{i}"), SkillKind::WorkflowPattern, t, "t", "d", 0.5, 0).unwrap();
            store.insert_unchecked(e).unwrap();
        }
        let r = store.retrieve(&query, k, theta).unwrap();
        prop_assert!(r.len() <= k);
        prop_assert!(r.entries.iter().all(|h| h.similarity >= theta));
        prop_assert!(r.entries.windows(2).all(|w| w[0].similarity >= w[1].similarity));
        let qualifying = texts.iter().filter(|t| {
            let a = store.embed(t).unwrap();
            let b = store.embed(&query).unwrap();
            a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() >= theta
        }).count();
        prop_assert_eq!(r.len(), qualifying.min(k));
    }

    #[test]
    fn write_gate_bounds_growth(text in sentence(), repeats in 1usize..12, dup_count in 1usize..4) {
        let config = MemoryConfig { dup_count, theta_dup: 0.9, ..MemoryConfig::default() };
        let store = MemoryStore::in_memory(config);
        for i in 0..repeats {
            let e = store.make_entry(format!("w{i}"), SkillKind::DecisionRule, &text, "t", "d", 0.5, 0).unwrap();
            store.store(e).unwrap();
        }
        prop_assert_eq!(store.len(), repeats.min(dup_count));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn trace_jsonl_round_trips(seed in 0u64..1_000) {
        let s = common::random_scenario(seed);
        let trace = match common::run(&s, seed) {
            Ok(o) => o.trace,
            Err(f) => f.trace,
        };
        let mut bytes = Vec::new();
        trace.write_jsonl(&mut bytes).unwrap();
        let back = Trace::read_jsonl(bytes.as_slice()).unwrap();
        prop_assert_eq!(&back.events, &trace.events);
        let mut again = Vec::new();
        back.write_jsonl(&mut again).unwrap();
        prop_assert_eq!(bytes, again);
    }
}
