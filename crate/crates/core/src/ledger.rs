//! Per-subagent context ledger with three-tier progressive compression.
//!
//! 1. Intra-tool truncation: a single tool output longer than `tau_max` is cut
//!    and a marker carrying the record id is appended; the record is entered
//!    in the truncation registry.
//! 2. Intra-round summarization: when a round holds more than one tool record
//!    and their combined length exceeds `tau_multi`, the round's tool records
//!    are replaced by one summary, truncated segments listed first.
//! 3. Cross-round retroactive compression: when the whole ledger exceeds
//!    `tau_context`, every registered truncated record is summarized and
//!    replaced in place, then the registry is reset.
//!
//! All lengths are Unicode scalar counts. A record's length is its content
//! plus its sub-query.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Message, MessageRole};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RecordId(pub u64);

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerConfig {
    pub tau_max: usize,
    pub tau_multi: usize,
    pub tau_context: usize,
    pub summary_cap: usize,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        Self { tau_max: 4_000, tau_multi: 12_000, tau_context: 64_000, summary_cap: 2_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("thresholds must satisfy 0 < tau_max < tau_multi < tau_context and summary_cap > 0, got {0:?}")]
    InvalidConfig(LedgerConfig),
    #[error("render budget {budget} is smaller than the summary cap {summary_cap}")]
    BudgetTooSmall { budget: usize, summary_cap: usize },
}

impl LedgerConfig {
    pub fn validate(&self) -> Result<(), LedgerError> {
        let ok = 0 < self.tau_max
            && self.tau_max < self.tau_multi
            && self.tau_multi < self.tau_context
            && self.summary_cap > 0;
        if ok {
            Ok(())
        } else {
            Err(LedgerError::InvalidConfig(*self))
        }
    }
}

pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

fn take_chars(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((idx, _)) => &s[..idx],
        None => s,
    }
}

fn last_chars(s: &str, n: usize) -> &str {
    let len = char_len(s);
    if n >= len {
        return s;
    }
    match s.char_indices().nth(len - n) {
        Some((idx, _)) => &s[idx..],
        None => "",
    }
}

/// Marker appended at a tier-1 cut point.
pub fn truncation_marker(kept: usize, original: usize, id: RecordId) -> String {
    format!("…[truncated: {kept} of {original} chars; id={id}]")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolRecord {
    pub record_id: RecordId,
    pub tool_name: String,
    pub sub_query: String,
    pub content: String,
    pub truncated: bool,
    pub original_length: usize,
    /// Marker text inserted at the cut point; empty when not truncated.
    pub marker: String,
    pub round: u32,
    /// Set once the record has been replaced in place by tier 3.
    pub compressed: bool,
}

impl ToolRecord {
    pub fn len(&self) -> usize {
        char_len(&self.content) + char_len(&self.sub_query)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Content with the marker stripped.
    pub fn kept_content(&self) -> &str {
        if self.truncated && !self.compressed {
            self.content.strip_suffix(self.marker.as_str()).unwrap_or(&self.content)
        } else {
            &self.content
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryOrigin {
    /// Tier 2.
    Round,
    /// Tier 3 fallback when the registry is empty.
    OldestRound,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub record_id: RecordId,
    pub round: u32,
    pub text: String,
    pub covers: Vec<RecordId>,
    pub origin: SummaryOrigin,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteRecord {
    pub record_id: RecordId,
    pub round: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LedgerRecord {
    Tool(ToolRecord),
    Summary(SummaryRecord),
    Note(NoteRecord),
}

impl LedgerRecord {
    pub fn id(&self) -> RecordId {
        match self {
            LedgerRecord::Tool(r) => r.record_id,
            LedgerRecord::Summary(r) => r.record_id,
            LedgerRecord::Note(r) => r.record_id,
        }
    }

    pub fn round(&self) -> u32 {
        match self {
            LedgerRecord::Tool(r) => r.round,
            LedgerRecord::Summary(r) => r.round,
            LedgerRecord::Note(r) => r.round,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            LedgerRecord::Tool(r) => r.len(),
            LedgerRecord::Summary(r) => char_len(&r.text),
            LedgerRecord::Note(r) => char_len(&r.text),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Raw records that the oldest-round fallback may fold: verbatim tool
    /// records and notes. Summaries and retroactively compressed records are
    /// never summarized again.
    fn foldable(&self) -> bool {
        match self {
            LedgerRecord::Tool(r) => !r.compressed,
            LedgerRecord::Note(_) => true,
            LedgerRecord::Summary(_) => false,
        }
    }

    fn to_message(&self) -> Message {
        match self {
            LedgerRecord::Tool(r) => Message {
                role: MessageRole::Tool,
                name: Some(r.tool_name.clone()),
                query: Some(r.sub_query.clone()),
                content: r.content.clone(),
            },
            LedgerRecord::Summary(r) => Message::new(MessageRole::Summary, r.text.clone()),
            LedgerRecord::Note(r) => Message::new(MessageRole::Note, r.text.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub tool_name: String,
    pub round: u32,
    pub original_length: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryPurpose {
    Round,
    Retroactive,
    OldestRound,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummarySection {
    pub record_id: RecordId,
    pub tool_name: Option<String>,
    pub sub_query: String,
    pub content: String,
    pub truncated: bool,
    pub original_length: usize,
}

/// Input handed to a [`Summarizer`]. Truncated sections come first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRequest {
    pub purpose: SummaryPurpose,
    pub round: u32,
    pub cap: usize,
    pub prioritize_truncated: bool,
    pub sections: Vec<SummarySection>,
}

impl SummaryRequest {
    fn new(purpose: SummaryPurpose, round: u32, cap: usize, mut sections: Vec<SummarySection>) -> Self {
        // stable: keeps ledger order within each group
        sections.sort_by_key(|s| !s.truncated);
        let prioritize_truncated = sections.iter().any(|s| s.truncated);
        Self { purpose, round, cap, prioritize_truncated, sections }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        if self.prioritize_truncated {
            out.push_str("Reconstruct the truncated segments precisely first.\n");
        }
        for s in &self.sections {
            let tool = s.tool_name.as_deref().unwrap_or("note");
            if s.truncated {
                out.push_str(&format!(
                    "[{tool} | query: {} | truncated, original {} chars, id={}]\n",
                    s.sub_query, s.original_length, s.record_id
                ));
            } else {
                out.push_str(&format!("[{tool} | query: {}]\n", s.sub_query));
            }
            out.push_str(&s.content);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("summarizer unavailable: {0}")]
pub struct SummarizerUnavailable(pub String);

pub trait Summarizer {
    fn summarize(&self, request: &SummaryRequest) -> Result<String, SummarizerUnavailable>;
}

impl<F> Summarizer for F
where
    F: Fn(&SummaryRequest) -> Result<String, SummarizerUnavailable>,
{
    fn summarize(&self, request: &SummaryRequest) -> Result<String, SummarizerUnavailable> {
        self(request)
    }
}

/// Head+tail extraction: the first 60% and last 40% of `cap` characters.
pub fn head_tail(text: &str, cap: usize) -> String {
    const SEP: &str = "\n…\n";
    let len = char_len(text);
    if len <= cap {
        return text.to_string();
    }
    let sep_len = char_len(SEP);
    if cap <= sep_len + 1 {
        return take_chars(text, cap).to_string();
    }
    let room = cap - sep_len;
    let head = room * 6 / 10;
    let tail = room - head;
    format!("{}{SEP}{}", take_chars(text, head), last_chars(text, tail))
}

/// Summary text plus whether the mechanical fallback produced it.
fn summarize_capped(summarizer: &dyn Summarizer, request: &SummaryRequest) -> (String, bool) {
    match summarizer.summarize(request) {
        Ok(text) => (take_chars(&text, request.cap).to_string(), false),
        Err(_) => (head_tail(&request.render(), request.cap), true),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum RoundAction {
    Kept,
    Summarized { summary_id: RecordId, replaced: Vec<RecordId>, prioritized: Vec<RecordId>, fallback: bool },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundClosure {
    pub round: u32,
    pub tool_count: usize,
    pub round_chars: usize,
    pub chars_after: usize,
    pub action: RoundAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressionPath {
    /// Trigger unmet.
    NoOp,
    /// Registered truncated records summarized in place.
    Retroactive,
    /// Registry empty: oldest round of raw records folded into one summary.
    OldestRound,
    /// Nothing left to summarize: oldest records dropped.
    Evicted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub path: CompressionPath,
    pub before: usize,
    pub after: usize,
    pub registry_before: usize,
    pub registry_after: usize,
    pub replaced: Vec<RecordId>,
    pub fallback_summaries: usize,
}

impl CompressionReport {
    pub fn is_noop(&self) -> bool {
        self.path == CompressionPath::NoOp
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerMeasure {
    pub total_chars: usize,
    /// `(round, chars)` for every round with at least one record, ascending.
    pub per_round_chars: Vec<(u32, usize)>,
    pub registry_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextLedger {
    config: LedgerConfig,
    records: Vec<LedgerRecord>,
    registry: BTreeMap<RecordId, RegistryEntry>,
    round: u32,
    next_id: u64,
}

impl ContextLedger {
    pub fn new(config: LedgerConfig) -> Result<Self, LedgerError> {
        config.validate()?;
        Ok(Self { config, records: Vec::new(), registry: BTreeMap::new(), round: 0, next_id: 0 })
    }

    pub fn config(&self) -> &LedgerConfig {
        &self.config
    }

    pub fn records(&self) -> &[LedgerRecord] {
        &self.records
    }

    pub fn registry(&self) -> &BTreeMap<RecordId, RegistryEntry> {
        &self.registry
    }

    pub fn current_round(&self) -> u32 {
        self.round
    }

    pub fn total_chars(&self) -> usize {
        self.records.iter().map(LedgerRecord::len).sum()
    }

    fn alloc_id(&mut self) -> RecordId {
        let id = RecordId(self.next_id);
        self.next_id += 1;
        id
    }

    /// Tier 1. Stores a tool output, truncating it past `tau_max`.
    pub fn record_tool_result(&mut self, tool_name: &str, sub_query: &str, raw_output: &str) -> ToolRecord {
        let id = self.alloc_id();
        let original_length = char_len(raw_output);
        let (content, truncated, marker) = if original_length > self.config.tau_max {
            let marker = truncation_marker(self.config.tau_max, original_length, id);
            let content = format!("{}{marker}", take_chars(raw_output, self.config.tau_max));
            (content, true, marker)
        } else {
            (raw_output.to_string(), false, String::new())
        };
        let record = ToolRecord {
            record_id: id,
            tool_name: tool_name.to_string(),
            sub_query: sub_query.to_string(),
            content,
            truncated,
            original_length,
            marker,
            round: self.round,
            compressed: false,
        };
        if truncated {
            self.registry
                .insert(id, RegistryEntry { tool_name: record.tool_name.clone(), round: self.round, original_length });
        }
        self.records.push(LedgerRecord::Tool(record.clone()));
        record
    }

    /// Free-form context entry (model feedback, verification notes). Clipped
    /// to `summary_cap`.
    pub fn record_note(&mut self, text: &str) -> RecordId {
        let id = self.alloc_id();
        let text = take_chars(text, self.config.summary_cap).to_string();
        self.records.push(LedgerRecord::Note(NoteRecord { record_id: id, round: self.round, text }));
        id
    }

    /// Tier 2, then advance to the next round.
    pub fn close_round(&mut self, summarizer: &dyn Summarizer) -> RoundClosure {
        let round = self.round;
        self.round += 1;
        let positions: Vec<usize> = self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| matches!(r, LedgerRecord::Tool(t) if t.round == round))
            .map(|(i, _)| i)
            .collect();
        let round_chars: usize = positions.iter().map(|&i| self.records[i].len()).sum();
        let tool_count = positions.len();
        if tool_count <= 1 || round_chars <= self.config.tau_multi {
            return RoundClosure {
                round,
                tool_count,
                round_chars,
                chars_after: round_chars,
                action: RoundAction::Kept,
            };
        }
        let sections: Vec<SummarySection> = positions
            .iter()
            .map(|&i| match &self.records[i] {
                LedgerRecord::Tool(t) => SummarySection {
                    record_id: t.record_id,
                    tool_name: Some(t.tool_name.clone()),
                    sub_query: t.sub_query.clone(),
                    content: t.kept_content().to_string(),
                    truncated: t.truncated,
                    original_length: t.original_length,
                },
                _ => unreachable!("positions only select tool records"),
            })
            .collect();
        let request = SummaryRequest::new(SummaryPurpose::Round, round, self.config.summary_cap, sections);
        let prioritized: Vec<RecordId> = request.sections.iter().filter(|s| s.truncated).map(|s| s.record_id).collect();
        let (text, fallback) = summarize_capped(summarizer, &request);
        let replaced: Vec<RecordId> = positions.iter().map(|&i| self.records[i].id()).collect();
        let summary_id = self.alloc_id();
        let chars_after = char_len(&text);
        let summary = LedgerRecord::Summary(SummaryRecord {
            record_id: summary_id,
            round,
            text,
            covers: replaced.clone(),
            origin: SummaryOrigin::Round,
            fallback,
        });
        self.replace_positions(&positions, summary);
        RoundClosure {
            round,
            tool_count,
            round_chars,
            chars_after,
            action: RoundAction::Summarized { summary_id, replaced, prioritized, fallback },
        }
    }

    /// Remove the records at `positions` (ascending) and insert `replacement`
    /// where the first one was. Registry entries of removed records go too.
    fn replace_positions(&mut self, positions: &[usize], replacement: LedgerRecord) {
        let first = positions[0];
        for &i in positions.iter().rev() {
            let removed = self.records.remove(i);
            self.registry.remove(&removed.id());
        }
        self.records.insert(first, replacement);
    }

    /// Tier 3, one pass. No-op while the ledger is within `tau_context`.
    pub fn compress_history(&mut self, summarizer: &dyn Summarizer) -> CompressionReport {
        let before = self.total_chars();
        let registry_before = self.registry.len();
        let mut report = CompressionReport {
            path: CompressionPath::NoOp,
            before,
            after: before,
            registry_before,
            registry_after: registry_before,
            replaced: Vec::new(),
            fallback_summaries: 0,
        };
        if before <= self.config.tau_context {
            return report;
        }
        if !self.registry.is_empty() {
            report.path = CompressionPath::Retroactive;
            let targets: Vec<RecordId> = self.registry.keys().copied().collect();
            for record in self.records.iter_mut() {
                let LedgerRecord::Tool(t) = record else { continue };
                if !targets.contains(&t.record_id) {
                    continue;
                }
                let content_len = char_len(&t.content);
                let cap = self.config.summary_cap.min(content_len.saturating_sub(1));
                let request = SummaryRequest::new(
                    SummaryPurpose::Retroactive,
                    t.round,
                    cap,
                    vec![SummarySection {
                        record_id: t.record_id,
                        tool_name: Some(t.tool_name.clone()),
                        sub_query: t.sub_query.clone(),
                        content: t.kept_content().to_string(),
                        truncated: true,
                        original_length: t.original_length,
                    }],
                );
                let (text, fallback) = summarize_capped(summarizer, &request);
                if fallback {
                    report.fallback_summaries += 1;
                }
                t.content = text;
                t.compressed = true;
                report.replaced.push(t.record_id);
            }
            self.registry.clear();
        } else if let Some(round) =
            self.records.iter().filter(|r| r.foldable() && !r.is_empty()).map(LedgerRecord::round).min()
        {
            report.path = CompressionPath::OldestRound;
            let positions: Vec<usize> = self
                .records
                .iter()
                .enumerate()
                .filter(|(_, r)| r.round() == round && r.foldable())
                .map(|(i, _)| i)
                .collect();
            let folded: usize = positions.iter().map(|&i| self.records[i].len()).sum();
            let sections = positions
                .iter()
                .map(|&i| match &self.records[i] {
                    LedgerRecord::Tool(t) => SummarySection {
                        record_id: t.record_id,
                        tool_name: Some(t.tool_name.clone()),
                        sub_query: t.sub_query.clone(),
                        content: t.content.clone(),
                        truncated: t.truncated,
                        original_length: t.original_length,
                    },
                    LedgerRecord::Note(n) => SummarySection {
                        record_id: n.record_id,
                        tool_name: None,
                        sub_query: String::new(),
                        content: n.text.clone(),
                        truncated: false,
                        original_length: char_len(&n.text),
                    },
                    LedgerRecord::Summary(_) => unreachable!("summaries are not foldable"),
                })
                .collect();
            let cap = self.config.summary_cap.min(folded - 1);
            let request = SummaryRequest::new(SummaryPurpose::OldestRound, round, cap, sections);
            let (text, fallback) = summarize_capped(summarizer, &request);
            if fallback {
                report.fallback_summaries += 1;
            }
            report.replaced = positions.iter().map(|&i| self.records[i].id()).collect();
            let id = self.alloc_id();
            let summary = LedgerRecord::Summary(SummaryRecord {
                record_id: id,
                round,
                text,
                covers: report.replaced.clone(),
                origin: SummaryOrigin::OldestRound,
                fallback,
            });
            self.replace_positions(&positions, summary);
        } else {
            report.path = CompressionPath::Evicted;
            // keep at least the newest record
            while self.total_chars() > self.config.tau_context && self.records.len() > 1 {
                let removed = self.records.remove(0);
                report.replaced.push(removed.id());
            }
        }
        report.after = self.total_chars();
        report.registry_after = self.registry.len();
        report
    }

    /// Run tier-3 passes until the ledger fits `tau_context` or no pass makes
    /// progress.
    pub fn enforce_budget(&mut self, summarizer: &dyn Summarizer) -> Vec<CompressionReport> {
        let mut reports = Vec::new();
        while self.total_chars() > self.config.tau_context {
            let report = self.compress_history(summarizer);
            let progressed = report.after < report.before;
            reports.push(report);
            if !progressed {
                break;
            }
        }
        reports
    }

    /// Materialize the ledger as messages within `budget` characters.
    ///
    /// Oldest records are elided first behind a single marker; the newest
    /// record is always present, clipped if it alone exceeds the budget.
    pub fn render_context(&self, budget: usize) -> Result<Vec<Message>, LedgerError> {
        if budget < self.config.summary_cap {
            return Err(LedgerError::BudgetTooSmall { budget, summary_cap: self.config.summary_cap });
        }
        let messages: Vec<Message> = self.records.iter().map(LedgerRecord::to_message).collect();
        let total: usize = messages.iter().map(Message::char_len).sum();
        if total <= budget {
            return Ok(messages);
        }
        let n = messages.len();
        let marker_for = |elided: usize| format!("[… {elided} earlier records elided …]");
        let mut kept = 0usize;
        let mut used = 0usize;
        for m in messages.iter().rev() {
            let len = m.char_len();
            let marker_len = char_len(&marker_for(n - kept - 1));
            if used + len + marker_len > budget {
                break;
            }
            used += len;
            kept += 1;
        }
        let mut out = Vec::with_capacity(kept + 1);
        let elided = n - kept.max(1);
        let marker = marker_for(elided);
        if kept == 0 {
            let mut newest = messages[n - 1].clone();
            let query_len = newest.query.as_deref().map_or(0, char_len);
            let room = budget.saturating_sub(char_len(&marker));
            if query_len > room {
                newest.query = Some(take_chars(newest.query.as_deref().unwrap_or(""), room).to_string());
                newest.content.clear();
            } else {
                newest.content = take_chars(&newest.content, room - query_len).to_string();
            }
            if elided > 0 {
                out.push(Message::new(MessageRole::Note, marker));
            }
            out.push(newest);
            return Ok(out);
        }
        out.push(Message::new(MessageRole::Note, marker));
        out.extend(messages[n - kept..].iter().cloned());
        Ok(out)
    }

    pub fn measure(&self) -> LedgerMeasure {
        let mut per_round: BTreeMap<u32, usize> = BTreeMap::new();
        for r in &self.records {
            *per_round.entry(r.round()).or_default() += r.len();
        }
        LedgerMeasure {
            total_chars: self.total_chars(),
            per_round_chars: per_round.into_iter().collect(),
            registry_size: self.registry.len(),
        }
    }

    /// Full text of the ledger, oldest first.
    pub fn transcript(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            match r {
                LedgerRecord::Tool(t) => {
                    out.push_str(&format!("[{} | {}]\n{}\n", t.tool_name, t.sub_query, t.content));
                }
                LedgerRecord::Summary(s) => out.push_str(&format!("[summary]\n{}\n", s.text)),
                LedgerRecord::Note(n) => out.push_str(&format!("[note]\n{}\n", n.text)),
            }
        }
        out
    }

    /// Registry holds exactly the live, truncated, not yet compressed records.
    pub fn registry_is_exact(&self) -> bool {
        let expected: Vec<RecordId> = self
            .records
            .iter()
            .filter_map(|r| match r {
                LedgerRecord::Tool(t) if t.truncated && !t.compressed => Some(t.record_id),
                _ => None,
            })
            .collect();
        let mut sorted = expected.clone();
        sorted.sort();
        sorted == self.registry.keys().copied().collect::<Vec<_>>()
    }
}
