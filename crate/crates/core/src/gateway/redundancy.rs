use std::collections::BTreeSet;

use super::Document;

pub const DEFAULT_SHINGLE: usize = 8;
pub const DEFAULT_THRESHOLD: f64 = 0.8;

/// Character `k`-shingles of `text`. Texts shorter than `k` form one shingle.
pub fn shingles(text: &str, k: usize) -> BTreeSet<String> {
    let chars: Vec<char> = text.chars().collect();
    if chars.len() <= k {
        return std::iter::once(text.to_string()).collect();
    }
    chars.windows(k).map(|w| w.iter().collect()).collect()
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        return 1.0;
    }
    inter as f64 / union as f64
}

/// Drop documents whose body duplicates, or overlaps at least the default
/// threshold with, a document already kept. Order is preserved.
pub fn filter_redundant(docs: &[Document]) -> Vec<Document> {
    filter_redundant_with(docs, DEFAULT_SHINGLE, DEFAULT_THRESHOLD)
}

pub fn filter_redundant_with(docs: &[Document], k: usize, threshold: f64) -> Vec<Document> {
    let mut kept: Vec<(Document, BTreeSet<String>)> = Vec::new();
    for d in docs {
        let sh = shingles(&d.body, k);
        let redundant = kept.iter().any(|(k_doc, k_sh)| k_doc.body == d.body || jaccard(k_sh, &sh) >= threshold);
        if !redundant {
            kept.push((d.clone(), sh));
        }
    }
    kept.into_iter().map(|(d, _)| d).collect()
}
