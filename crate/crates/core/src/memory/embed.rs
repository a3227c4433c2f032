use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmbedError {
    #[error("embedder unavailable: {0}")]
    Unavailable(String),
    #[error("cannot embed empty text")]
    EmptyText,
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    /// Unit-normalized embedding of `text`.
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError>;
}

pub const DEFAULT_DIMENSION: usize = 256;

/// Signed feature hashing of lowercase alphanumeric tokens.
#[derive(Debug, Clone, Copy)]
pub struct HashedBowEmbedder {
    dimension: usize,
}

impl HashedBowEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }
}

impl Default for HashedBowEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

impl Embedder for HashedBowEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let mut tokens = tokenize(text);
        if tokens.is_empty() {
            // punctuation-only text still gets a stable direction
            tokens.push(text.trim().to_string());
        }
        let mut v = vec![0.0f64; self.dimension];
        for tok in &tokens {
            let h = fnv1a(tok.as_bytes());
            let idx = (h % self.dimension as u64) as usize;
            let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
            v[idx] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // every token cancelled out; fall back to the first bucket hit
            let idx = (fnv1a(tokens[0].as_bytes()) % self.dimension as u64) as usize;
            v[idx] = 1.0;
            return Ok(v);
        }
        for x in &mut v {
            *x /= norm;
        }
        Ok(v)
    }
}

/// Cosine of two unit vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
