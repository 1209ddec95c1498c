//! Text embeddings.
//!
//! The reference [`HashedBowEmbedder`] is a hashed bag of words:
//!
//! 1. [`tokens`]: lowercase, split on anything that is not alphanumeric or
//!    `_`, drop the words in [`STOPWORDS`].
//! 2. Each token adds `1.0` to bucket `fnv1a64(token) % 256`.
//! 3. The counts are divided by their L2 norm (accumulated in `f64`) and
//!    stored as `f32`. A text with no tokens embeds to the zero vector.
//!
//! Sparse vectors use the same tokens: term frequency divided by the L2 norm
//! of all term frequencies.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::hash::fnv1a64;

pub const DEFAULT_DIM: usize = 256;

/// Function words ignored by both the dense and sparse representations.
pub const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "been", "by", "did", "do", "does", "for", "from",
    "had", "has", "have", "he", "her", "his", "how", "in", "into", "is", "it", "its", "no", "not",
    "of", "on", "or", "she", "than", "that", "the", "their", "them", "then", "there", "these",
    "they", "this", "those", "to", "was", "were", "what", "when", "where", "which", "who", "whom",
    "whose", "with",
];

/// Maps text to a fixed-dimension dense vector.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f32>;
}

#[derive(Debug, Clone, Copy)]
pub struct HashedBowEmbedder {
    dim: usize,
}

impl HashedBowEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashedBowEmbedder { dim }
    }
}

impl Default for HashedBowEmbedder {
    fn default() -> Self {
        HashedBowEmbedder::new(DEFAULT_DIM)
    }
}

impl Embedder for HashedBowEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f32> {
        let mut counts = vec![0f64; self.dim];
        for t in tokens(text) {
            counts[(fnv1a64(t.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        let norm = libm::sqrt(counts.iter().map(|c| c * c).sum::<f64>());
        if norm == 0.0 {
            return vec![0.0; self.dim];
        }
        counts.iter().map(|c| (c / norm) as f32).collect()
    }
}

pub fn tokens(text: &str) -> Vec<String> {
    crate::text::words(text)
        .into_iter()
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .collect()
}

/// L2-normalized term frequencies.
pub fn sparse_vector(text: &str) -> BTreeMap<String, f32> {
    let mut tf: BTreeMap<String, f64> = BTreeMap::new();
    for t in tokens(text) {
        *tf.entry(t).or_default() += 1.0;
    }
    let norm = libm::sqrt(tf.values().map(|c| c * c).sum::<f64>());
    tf.into_iter()
        .map(|(k, c)| (k, (c / norm) as f32))
        .collect()
}

/// Cosine similarity; 0 when either side is the zero vector.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0f64;
    let mut na = 0f64;
    let mut nb = 0f64;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (libm::sqrt(na) * libm::sqrt(nb))
}

/// Dot product of two normalized sparse vectors over their shared terms.
pub fn sparse_overlap(query: &BTreeMap<String, f32>, doc: &BTreeMap<String, f32>) -> f64 {
    query
        .iter()
        .filter_map(|(t, w)| doc.get(t).map(|d| f64::from(*w) * f64::from(*d)))
        .sum()
}
