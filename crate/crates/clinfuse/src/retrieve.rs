//! Exact top-k similar-visit retrieval over L2-normalized embeddings with
//! self- and same-patient exclusion, plus labeled cohort splitting.
//!
//! The index is an exact scan: at desk scale nothing approximate is
//! needed, and exactness is what makes retrieval testable against a
//! linear-scan oracle. The embedder is pluggable so an ANN or external
//! embedding backend can slot in behind the same surface.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{CohortStore, Phase};
use crate::cohort::{Task, VisitKey};
use crate::embed::{hash_embed, EmbedError, EmbeddingVector};

#[derive(Debug, Error)]
pub enum RetrieveError {
    #[error("visit {0} is not indexed and no ad-hoc embedding was supplied")]
    QueryNotIndexed(VisitKey),
    #[error("pool size must be >= 1")]
    BadPool,
    #[error("embedding failed: {0}")]
    Embed(#[from] EmbedError),
}

/// Text-to-vector provider used for indexing and querying. Mirrors the
/// hashed-embedding signature; the hashed embedder is the hermetic
/// default, an external service can implement the same trait.
pub trait TextEmbedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
    fn dim(&self) -> usize;
}

/// Deterministic hashed-bag-of-words embedder.
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        HashEmbedder { dim }
    }
}

impl TextEmbedder for HashEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        hash_embed(text, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

/// Immutable visit embedding index with per-row task labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VisitIndex {
    pub keys: Vec<VisitKey>,
    matrix: Vec<Vec<f64>>,
    labels: Vec<u8>,
    dim: usize,
    /// Visits that could not be indexed, with the reason.
    pub excluded: Vec<(VisitKey, String)>,
    format_version: u32,
}

const INDEX_FORMAT_VERSION: u32 = 1;

impl VisitIndex {
    /// Assemble an index from prepared rows; rows must be normalized.
    pub fn from_rows(keys: Vec<VisitKey>, rows: Vec<EmbeddingVector>, labels: Vec<u8>) -> Self {
        assert_eq!(keys.len(), rows.len());
        assert_eq!(keys.len(), labels.len());
        let dim = rows.first().map(|r| r.dim()).unwrap_or(0);
        VisitIndex {
            keys,
            matrix: rows.into_iter().map(|r| r.values).collect(),
            labels,
            dim,
            excluded: Vec::new(),
            format_version: INDEX_FORMAT_VERSION,
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label_of(&self, key: &VisitKey) -> Option<u8> {
        self.keys.iter().position(|k| k == key).map(|i| self.labels[i])
    }

    pub fn row(&self, key: &VisitKey) -> Option<&[f64]> {
        self.keys.iter().position(|k| k == key).map(|i| self.matrix[i].as_slice())
    }

    /// Exact top-`pool` neighbors of an indexed visit by inner product,
    /// excluding every visit of the same patient. Ties break by key order.
    pub fn query(&self, key: &VisitKey, pool: usize) -> Result<Vec<(VisitKey, f64)>, RetrieveError> {
        let row = self.row(key).ok_or_else(|| RetrieveError::QueryNotIndexed(key.clone()))?;
        let embedding = EmbeddingVector { values: row.to_vec(), normalized: true };
        self.query_embedding(&key.patient_id, &embedding, pool)
    }

    /// Exact top-`pool` scan for an ad-hoc embedding, excluding every
    /// visit belonging to `exclude_patient`.
    pub fn query_embedding(
        &self,
        exclude_patient: &str,
        embedding: &EmbeddingVector,
        pool: usize,
    ) -> Result<Vec<(VisitKey, f64)>, RetrieveError> {
        if pool == 0 {
            return Err(RetrieveError::BadPool);
        }
        let mut scored: Vec<(VisitKey, f64)> = self
            .keys
            .iter()
            .zip(&self.matrix)
            .filter(|(k, _)| k.patient_id != exclude_patient)
            .map(|(k, row)| {
                let score: f64 = row.iter().zip(&embedding.values).map(|(a, b)| a * b).sum();
                (k.clone(), score)
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        scored.truncate(pool);
        Ok(scored)
    }

    pub fn save(&self, path: &std::path::Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string(self).expect("index serializes"))
    }

    pub fn load(path: &std::path::Path) -> std::io::Result<Self> {
        let data = std::fs::read_to_string(path)?;
        serde_json::from_str(&data)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// Embed every labeled visit (context text including raw notes) and build
/// the index in key order. Unlabeled and zero-vector visits are excluded
/// with a logged warning.
pub fn build_index(
    store: &CohortStore,
    keys: &[VisitKey],
    task: Task,
    embedder: &dyn TextEmbedder,
) -> Result<VisitIndex, RetrieveError> {
    let mut sorted: Vec<VisitKey> = keys.to_vec();
    sorted.sort();
    let mut out_keys = Vec::new();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut excluded = Vec::new();
    for key in sorted {
        let Some(visit) = store.visit(&key, Phase::Fit) else {
            excluded.push((key.clone(), "not in cohort".to_string()));
            continue;
        };
        let Some(label) = store.label(&key, task, Phase::Fit) else {
            log::warn!("visit {key} has no {task} label; excluded from index");
            excluded.push((key.clone(), "unlabeled".to_string()));
            continue;
        };
        let history = store.history(&key, Phase::Fit);
        let text = crate::context::retrieval_text(visit, &history);
        let embedding = embedder.embed(&text)?;
        if !embedding.normalized {
            log::warn!("visit {key} produced a zero embedding; excluded from index");
            excluded.push((key.clone(), "zero embedding".to_string()));
            continue;
        }
        out_keys.push(key);
        rows.push(embedding);
        labels.push(label);
    }
    let mut index = VisitIndex::from_rows(out_keys, rows, labels);
    index.excluded = excluded;
    Ok(index)
}

/// One retrieved neighbor with its context snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CohortEntry {
    pub key: VisitKey,
    pub score: f64,
    pub label: u8,
    /// Rendered context of the neighbor, filled by the caller.
    pub context: String,
}

/// Up to `k` labeled positive and negative exemplars from a ranked pool.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SimilarCohort {
    pub positives: Vec<CohortEntry>,
    pub negatives: Vec<CohortEntry>,
    pub pool_size: usize,
}

/// Take the first `k` label-1 and first `k` label-0 entries from the
/// ranked pool; fewer are kept when the pool runs dry.
pub fn split_cohorts(
    pool: &[(VisitKey, f64)],
    label_of: impl Fn(&VisitKey) -> Option<u8>,
    k: usize,
) -> SimilarCohort {
    let mut cohort = SimilarCohort { pool_size: pool.len(), ..Default::default() };
    for (key, score) in pool {
        let Some(label) = label_of(key) else { continue };
        let bucket = if label == 1 { &mut cohort.positives } else { &mut cohort.negatives };
        if bucket.len() < k {
            bucket.push(CohortEntry { key: key.clone(), score: *score, label, context: String::new() });
        }
        if cohort.positives.len() == k && cohort.negatives.len() == k {
            break;
        }
    }
    cohort
}
