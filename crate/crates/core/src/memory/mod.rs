//! Self-evolving semantic memory.
//!
//! Skill snippets distilled from every execution trace, successful or not,
//! are embedded and kept in an append-only store. Reads return the top-k
//! entries above a similarity floor; writes are suppressed when the candidate
//! already has enough high-similarity neighbours.

mod embed;
mod extract;

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{cosine, tokenize, EmbedError, Embedder, HashedBowEmbedder, DEFAULT_DIMENSION};
pub use extract::{extract_skills, ExtractionOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillKind {
    CodeSnippet,
    ToolUsage,
    TechnicalInsight,
    DecisionRule,
    WorkflowPattern,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub entry_id: String,
    pub kind: SkillKind,
    pub skill_text: String,
    pub source_trace: String,
    pub task_digest: String,
    pub confidence: f64,
    pub embedding: Vec<f64>,
    /// Logical timestamp (milliseconds of the producing run's clock).
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntry {
    pub entry: MemoryEntry,
    pub similarity: f64,
}

/// Sorted by similarity descending, ties by insertion order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub entries: Vec<ScoredEntry>,
}

impl RetrievalResult {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|s| s.entry.entry_id.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryConfig {
    pub k: usize,
    pub theta_read: f64,
    pub theta_dup: f64,
    pub dup_count: usize,
    pub dimension: usize,
    pub store_path: Option<PathBuf>,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self { k: 5, theta_read: 0.55, theta_dup: 0.9, dup_count: 2, dimension: DEFAULT_DIMENSION, store_path: None }
    }
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("entry `{id}` has dimension {found}, store expects {expected}")]
    DimensionMismatch { id: String, expected: usize, found: usize },
    #[error("entry `{0}` has empty skill text")]
    EmptySkill(String),
    #[error("memory store persistence failed: {0}")]
    Persistence(#[from] std::io::Error),
    #[error("memory store line {line}: {source}")]
    Corrupt {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Write gate: reject when at least `dup_count` retrieved neighbours reach
/// `theta_dup`.
pub fn should_store(retrieval: &RetrievalResult, theta_dup: f64, dup_count: usize) -> bool {
    let high = retrieval.entries.iter().filter(|s| s.similarity >= theta_dup).count();
    high < dup_count
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoreDecision {
    pub stored: bool,
    pub high_similarity_hits: usize,
}

struct Candidate {
    similarity: f64,
    index: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    /// "Greater" means better: higher similarity, then earlier insertion.
    fn cmp(&self, other: &Self) -> Ordering {
        self.similarity.total_cmp(&other.similarity).then_with(|| other.index.cmp(&self.index))
    }
}

fn top_k_above(entries: &[MemoryEntry], query: &[f64], k: usize, theta: f64) -> Vec<(usize, f64)> {
    if k == 0 {
        return Vec::new();
    }
    // min-heap of the best k seen so far
    let mut heap: BinaryHeap<std::cmp::Reverse<Candidate>> = BinaryHeap::with_capacity(k + 1);
    for (index, e) in entries.iter().enumerate() {
        let similarity = cosine(query, &e.embedding);
        if similarity < theta {
            continue;
        }
        heap.push(std::cmp::Reverse(Candidate { similarity, index }));
        if heap.len() > k {
            heap.pop();
        }
    }
    let mut best: Vec<Candidate> = heap.into_iter().map(|r| r.0).collect();
    best.sort_by(|a, b| b.cmp(a));
    best.into_iter().map(|c| (c.index, c.similarity)).collect()
}

pub struct MemoryStore {
    config: MemoryConfig,
    embedder: Arc<dyn Embedder>,
    entries: RwLock<Vec<MemoryEntry>>,
    file: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl std::fmt::Debug for MemoryStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MemoryStore")
            .field("config", &self.config)
            .field("len", &self.len())
            .field("path", &self.path)
            .finish()
    }
}

impl MemoryStore {
    /// In-memory store using the default hashed bag-of-words embedder.
    pub fn in_memory(config: MemoryConfig) -> Self {
        let embedder = Arc::new(HashedBowEmbedder::new(config.dimension));
        Self::with_embedder(config, embedder)
    }

    pub fn with_embedder(config: MemoryConfig, embedder: Arc<dyn Embedder>) -> Self {
        Self { config, embedder, entries: RwLock::new(Vec::new()), file: None, path: None }
    }

    /// Open (or create) a JSONL store file and rebuild the index from it.
    pub fn open(path: impl AsRef<Path>, config: MemoryConfig) -> Result<Self, MemoryError> {
        let path = path.as_ref().to_path_buf();
        let entries = if path.exists() { read_entries(&path)? } else { Vec::new() };
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        let store = Self {
            embedder: Arc::new(HashedBowEmbedder::new(config.dimension)),
            config,
            entries: RwLock::new(Vec::new()),
            file: Some(Mutex::new(file)),
            path: Some(path),
        };
        for e in &entries {
            store.check_entry(e)?;
        }
        *store.entries.write().expect("memory lock poisoned") = entries;
        Ok(store)
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.config
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("memory lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<MemoryEntry> {
        self.entries.read().expect("memory lock poisoned").clone()
    }

    pub fn get(&self, entry_id: &str) -> Option<MemoryEntry> {
        self.entries.read().expect("memory lock poisoned").iter().find(|e| e.entry_id == entry_id).cloned()
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>, MemoryError> {
        Ok(self.embedder.embed(text)?)
    }

    fn check_entry(&self, entry: &MemoryEntry) -> Result<(), MemoryError> {
        if entry.skill_text.trim().is_empty() {
            return Err(MemoryError::EmptySkill(entry.entry_id.clone()));
        }
        if entry.embedding.len() != self.config.dimension {
            return Err(MemoryError::DimensionMismatch {
                id: entry.entry_id.clone(),
                expected: self.config.dimension,
                found: entry.embedding.len(),
            });
        }
        Ok(())
    }

    pub fn retrieve(&self, query: &str, k: usize, theta_read: f64) -> Result<RetrievalResult, MemoryError> {
        let q = self.embed(query)?;
        let entries = self.entries.read().expect("memory lock poisoned");
        Ok(Self::retrieve_locked(&entries, &q, k, theta_read))
    }

    fn retrieve_locked(entries: &[MemoryEntry], query: &[f64], k: usize, theta: f64) -> RetrievalResult {
        RetrievalResult {
            entries: top_k_above(entries, query, k, theta)
                .into_iter()
                .map(|(i, similarity)| ScoredEntry { entry: entries[i].clone(), similarity })
                .collect(),
        }
    }

    /// Build an entry for `skill_text` with its embedding.
    #[allow(clippy::too_many_arguments)]
    pub fn make_entry(
        &self,
        entry_id: String,
        kind: SkillKind,
        skill_text: &str,
        source_trace: &str,
        task_digest: &str,
        confidence: f64,
        created_at: u64,
    ) -> Result<MemoryEntry, MemoryError> {
        if skill_text.trim().is_empty() {
            return Err(MemoryError::EmptySkill(entry_id));
        }
        Ok(MemoryEntry {
            embedding: self.embed(skill_text)?,
            entry_id,
            kind,
            skill_text: skill_text.to_string(),
            source_trace: source_trace.to_string(),
            task_digest: task_digest.to_string(),
            confidence: confidence.clamp(0.0, 1.0),
            created_at,
        })
    }

    /// Gate on the entry's own text, then persist if admitted. Gate and
    /// insert happen under one write lock.
    pub fn store(&self, entry: MemoryEntry) -> Result<StoreDecision, MemoryError> {
        self.check_entry(&entry)?;
        let mut entries = self.entries.write().expect("memory lock poisoned");
        let k = self.config.k.max(self.config.dup_count);
        let retrieval = Self::retrieve_locked(&entries, &entry.embedding, k, self.config.theta_read);
        let high_similarity_hits = retrieval.entries.iter().filter(|s| s.similarity >= self.config.theta_dup).count();
        if !should_store(&retrieval, self.config.theta_dup, self.config.dup_count) {
            return Ok(StoreDecision { stored: false, high_similarity_hits });
        }
        if let Some(file) = &self.file {
            let mut f = file.lock().expect("memory file lock poisoned");
            let line = serde_json::to_string(&entry).map_err(std::io::Error::from)?;
            writeln!(f, "{line}")?;
            f.flush()?;
        }
        entries.push(entry);
        Ok(StoreDecision { stored: true, high_similarity_hits })
    }

    /// Insert without consulting the gate (seeding fixtures, replaying
    /// snapshots). Not persisted.
    pub fn insert_unchecked(&self, entry: MemoryEntry) -> Result<(), MemoryError> {
        self.check_entry(&entry)?;
        self.entries.write().expect("memory lock poisoned").push(entry);
        Ok(())
    }

    /// Independent copy of the current contents, detached from any file.
    pub fn fork(&self) -> Self {
        let copy = Self::with_embedder(MemoryConfig { store_path: None, ..self.config.clone() }, self.embedder.clone());
        *copy.entries.write().expect("memory lock poisoned") = self.snapshot();
        copy
    }
}

fn read_entries(path: &Path) -> Result<Vec<MemoryEntry>, MemoryError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| MemoryError::Corrupt { line: i + 1, source })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompactReport {
    pub before: usize,
    pub after: usize,
}

/// Replay every entry of a store file through the write gate, in file order,
/// and rewrite the file with the survivors.
pub fn compact_store(path: impl AsRef<Path>, config: &MemoryConfig) -> Result<CompactReport, MemoryError> {
    let path = path.as_ref();
    let entries = read_entries(path)?;
    let fresh = MemoryStore::in_memory(config.clone());
    for e in &entries {
        fresh.store(e.clone())?;
    }
    let survivors = fresh.snapshot();
    let tmp = path.with_extension("jsonl.compact");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        for e in &survivors {
            serde_json::to_writer(&mut w, e).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(CompactReport { before: entries.len(), after: survivors.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> MemoryStore {
        MemoryStore::in_memory(MemoryConfig::default())
    }

    fn add(s: &MemoryStore, id: &str, text: &str) -> StoreDecision {
        let e = s.make_entry(id.into(), SkillKind::TechnicalInsight, text, "t", "d", 0.5, 0).unwrap();
        s.store(e).unwrap()
    }

    fn scored(sims: &[f64]) -> RetrievalResult {
        let s = store();
        RetrievalResult {
            entries: sims
                .iter()
                .enumerate()
                .map(|(i, &similarity)| ScoredEntry {
                    entry: s.make_entry(format!("e{i}"), SkillKind::ToolUsage, "x", "t", "d", 0.5, 0).unwrap(),
                    similarity,
                })
                .collect(),
        }
    }

    #[test]
    fn gate_decisions() {
        assert!(should_store(&RetrievalResult::default(), 0.9, 2));
        assert!(!should_store(&scored(&[0.95, 0.95]), 0.9, 2));
        assert!(should_store(&scored(&[0.95, 0.4]), 0.9, 2));
    }

    #[test]
    fn empty_store_retrieves_nothing() {
        assert!(store().retrieve("anything", 5, 0.55).unwrap().is_empty());
    }

    #[test]
    fn verbatim_text_retrieved_at_similarity_one() {
        let s = store();
        add(&s, "a", "use ffmpeg to cut audio clips");
        add(&s, "b", "parse pdf tables with camelot");
        let r = s.retrieve("use ffmpeg to cut audio clips", 5, 0.55).unwrap();
        assert_eq!(r.ids()[0], "a");
        assert!((r.entries[0].similarity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn repeated_writes_converge() {
        let s = store();
        let decisions: Vec<bool> =
            (0..5).map(|i| add(&s, &format!("e{i}"), "identify audio using shazam").stored).collect();
        assert_eq!(decisions, vec![true, true, false, false, false]);
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn paraphrase_above_theta_dup_rejected() {
        let s = store();
        let base =
            "extract the music clip from the video with ffmpeg then identify the song title with the shazamio library";
        add(&s, "a", base);
        add(&s, "b", base);
        let paraphrase =
            "Extract the music clip from the video with ffmpeg, then identify the song name with the shazamio library.";
        let d = add(&s, "c", paraphrase);
        assert!(!d.stored);
        assert_eq!(d.high_similarity_hits, 2);
    }

    #[test]
    fn dimension_and_empty_text_checked() {
        let s = store();
        let mut e = s.make_entry("x".into(), SkillKind::CodeSnippet, "code", "t", "d", 0.5, 0).unwrap();
        e.embedding.pop();
        assert!(matches!(s.store(e), Err(MemoryError::DimensionMismatch { .. })));
        assert!(matches!(
            s.make_entry("y".into(), SkillKind::CodeSnippet, "  ", "t", "d", 0.5, 0),
            Err(MemoryError::EmptySkill(_))
        ));
    }

    #[test]
    fn persisted_store_reopens() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mem.jsonl");
        {
            let s = MemoryStore::open(&path, MemoryConfig::default()).unwrap();
            add(&s, "a", "first skill about search engines");
            add(&s, "b", "second skill about spreadsheets");
        }
        let s = MemoryStore::open(&path, MemoryConfig::default()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.get("b").unwrap().skill_text, "second skill about spreadsheets");
    }

    #[test]
    fn corrupt_store_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mem.jsonl");
        std::fs::write(&path, "{not json}\n").unwrap();
        assert!(matches!(MemoryStore::open(&path, MemoryConfig::default()), Err(MemoryError::Corrupt { line: 1, .. })));
    }

    #[test]
    fn fork_is_independent() {
        let s = store();
        add(&s, "a", "alpha beta");
        let f = s.fork();
        add(&f, "b", "gamma delta");
        assert_eq!(s.len(), 1);
        assert_eq!(f.len(), 2);
    }
}
