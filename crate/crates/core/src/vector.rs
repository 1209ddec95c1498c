//! Exact hybrid (dense + sparse) chunk index.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{cosine, sparse_overlap, sparse_vector, Embedder};
use crate::value::{SourceRef, Value};

pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: u64,
    pub document_id: i64,
    pub text: String,
    pub dense_vec: Vec<f32>,
    pub sparse_vec: BTreeMap<String, f32>,
    pub metadata: BTreeMap<String, Value>,
}

impl Chunk {
    /// Embeds `text` and records `document_id` in the metadata.
    pub fn embedded(
        chunk_id: u64,
        document_id: i64,
        text: impl Into<String>,
        mut metadata: BTreeMap<String, Value>,
        embedder: &dyn Embedder,
    ) -> Self {
        let text = text.into();
        metadata.insert("document_id".into(), Value::Int(document_id));
        Chunk {
            chunk_id,
            document_id,
            dense_vec: embedder.embed(&text),
            sparse_vec: sparse_vector(&text),
            text,
            metadata,
        }
    }

    pub fn source_ref(&self) -> SourceRef {
        SourceRef::Chunk {
            document_id: self.document_id,
            chunk_id: self.chunk_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkHit {
    pub chunk_id: u64,
    pub document_id: i64,
    pub score: f64,
    pub dense: f64,
    pub sparse: f64,
    pub text: String,
    pub metadata: BTreeMap<String, Value>,
}

impl ChunkHit {
    pub fn source_ref(&self) -> SourceRef {
        SourceRef::Chunk {
            document_id: self.document_id,
            chunk_id: self.chunk_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IndexError {
    #[error("chunk {chunk_id} has dimension {got}, index expects {expected}")]
    Dimension {
        chunk_id: u64,
        expected: usize,
        got: usize,
    },
    #[error("chunk {0} has no document_id metadata")]
    MissingDocumentId(u64),
    #[error("duplicate chunk id {0}")]
    DuplicateChunk(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SearchError {
    #[error("the vector index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    alpha: f64,
    chunks: Vec<Chunk>,
}

impl VectorIndex {
    pub fn new(dim: usize) -> Self {
        VectorIndex {
            dim,
            alpha: DEFAULT_ALPHA,
            chunks: Vec::new(),
        }
    }

    /// Dense weight in the fused score, clamped to `[0, 1]`.
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha.clamp(0.0, 1.0);
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn add(&mut self, chunk: Chunk) -> Result<(), IndexError> {
        if chunk.dense_vec.len() != self.dim {
            return Err(IndexError::Dimension {
                chunk_id: chunk.chunk_id,
                expected: self.dim,
                got: chunk.dense_vec.len(),
            });
        }
        if chunk.metadata.get("document_id") != Some(&Value::Int(chunk.document_id)) {
            return Err(IndexError::MissingDocumentId(chunk.chunk_id));
        }
        if self.chunks.iter().any(|c| c.chunk_id == chunk.chunk_id) {
            return Err(IndexError::DuplicateChunk(chunk.chunk_id));
        }
        self.chunks.push(chunk);
        Ok(())
    }

    pub fn document_ids(&self) -> BTreeSet<i64> {
        self.chunks.iter().map(|c| c.document_id).collect()
    }

    pub fn resolves(&self, r: &SourceRef) -> bool {
        match r {
            SourceRef::Chunk {
                document_id,
                chunk_id,
            } => self
                .chunks
                .iter()
                .any(|c| c.chunk_id == *chunk_id && c.document_id == *document_id),
            SourceRef::Row { .. } => false,
        }
    }
}

/// Top-`k` chunks by `alpha * dense + (1 - alpha) * sparse`, ties broken by
/// ascending chunk id. `doc_filter` restricts candidates before ranking.
pub fn search_vector(
    index: &VectorIndex,
    embedder: &dyn Embedder,
    query_text: &str,
    k: usize,
    doc_filter: Option<&BTreeSet<i64>>,
) -> Result<Vec<ChunkHit>, SearchError> {
    if k == 0 {
        return Err(SearchError::ZeroK);
    }
    if index.is_empty() {
        return Err(SearchError::EmptyIndex);
    }
    let q_dense = embedder.embed(query_text);
    let q_sparse = sparse_vector(query_text);
    let alpha = index.alpha;
    let mut hits: Vec<ChunkHit> = index
        .chunks
        .iter()
        .filter(|c| doc_filter.is_none_or(|f| f.contains(&c.document_id)))
        .map(|c| {
            let dense = cosine(&q_dense, &c.dense_vec);
            let sparse = sparse_overlap(&q_sparse, &c.sparse_vec);
            ChunkHit {
                chunk_id: c.chunk_id,
                document_id: c.document_id,
                score: alpha * dense + (1.0 - alpha) * sparse,
                dense,
                sparse,
                text: c.text.clone(),
                metadata: c.metadata.clone(),
            }
        })
        .collect();
    hits.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.chunk_id.cmp(&b.chunk_id))
    });
    hits.truncate(k);
    Ok(hits)
}
