//! Text embeddings and exact top-k cosine search.
//!
//! All vectors are L2-normalized on construction, so cosine similarity is a
//! plain dot product. The index keeps its entries sorted by id; ties in
//! similarity are broken by ascending id, which makes every query result
//! independent of insertion order.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::time::Duration;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::corpus::{parse_fragment, Split};
use crate::error::EmbeddingError;

pub const MIN_HASH_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalize `values` to unit length. All-zero input is rejected.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::InvalidDimension(0));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::InvalidIndex("non-finite embedding entry".into()));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EmbeddingError::InvalidIndex("zero vector cannot be normalized".into()));
        }
        for v in &mut values {
            *v /= norm;
        }
        Ok(EmbeddingVector(values))
    }

    pub(crate) fn placeholder() -> Self {
        EmbeddingVector(Vec::new())
    }

    pub(crate) fn cosine_slice(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    fn uniform(dim: usize) -> Self {
        EmbeddingVector(vec![1.0 / (dim as f64).sqrt(); dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Cosine similarity; both vectors are unit length.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.0, &other.0)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Source of vector representations. Identical text must map to an
/// identical vector, and `dim` is fixed for the provider's lifetime.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError>;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

/// Offline embedder: signed character-trigram feature hashing.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Result<Self, EmbeddingError> {
        if dim < MIN_HASH_DIM {
            return Err(EmbeddingError::InvalidDimension(dim));
        }
        Ok(HashEmbedder { dim })
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn name(&self) -> &str {
        "hash-trigram"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        hash_embed(text, self.dim)
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const SIGN_SEED: u64 = 0x9e37_79b9_7f4a_7c15;

fn fnv1a(bytes: &[u8], basis: u64) -> u64 {
    bytes
        .iter()
        .fold(basis, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Hash the lowercased, space-padded character trigrams of `text` into
/// `dim` signed buckets and normalize. Empty text (or text whose counts
/// cancel out) yields the uniform vector and a warning.
pub fn hash_embed(text: &str, dim: usize) -> Result<EmbeddingVector, EmbeddingError> {
    if dim < MIN_HASH_DIM {
        return Err(EmbeddingError::InvalidDimension(dim));
    }
    if text.trim().is_empty() {
        log::warn!("embedding empty text; returning the uniform vector");
        return Ok(EmbeddingVector::uniform(dim));
    }
    let mut padded = vec![' '];
    padded.extend(text.to_lowercase().chars());
    padded.push(' ');

    let mut counts = vec![0.0f64; dim];
    let mut key = String::with_capacity(12);
    for w in padded.windows(3) {
        key.clear();
        key.extend(w);
        let bucket = (fnv1a(key.as_bytes(), FNV_OFFSET) % dim as u64) as usize;
        let sign = if fnv1a(key.as_bytes(), FNV_OFFSET ^ SIGN_SEED) & 1 == 0 {
            1.0
        } else {
            -1.0
        };
        counts[bucket] += sign;
    }
    match EmbeddingVector::normalized(counts) {
        Ok(v) => Ok(v),
        Err(_) => {
            log::warn!("trigram counts of {text:?} cancel out; returning the uniform vector");
            Ok(EmbeddingVector::uniform(dim))
        }
    }
}

/// Client for an HTTP embedding service:
/// `POST {model, input: [text]}` → `{embeddings: [[f64]]}`.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    endpoint: String,
    model: String,
    dim: usize,
    http: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, dim: usize) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::InvalidDimension(dim));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| EmbeddingError::BackendUnavailable(e.to_string()))?;
        Ok(RemoteEmbedder {
            endpoint: endpoint.into(),
            model: model.into(),
            dim,
            http,
        })
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn name(&self) -> &str {
        &self.model
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        remote_embed(text, self)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let body = EmbedRequest {
            model: &self.model,
            input: texts,
        };
        let resp = self
            .http
            .post(&self.endpoint)
            .json(&body)
            .send()
            .map_err(|e| EmbeddingError::BackendUnavailable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(EmbeddingError::BackendUnavailable(format!("HTTP {status}")));
        }
        let parsed: EmbedResponse = resp
            .json()
            .map_err(|e| EmbeddingError::BackendUnavailable(format!("bad response body: {e}")))?;
        if parsed.embeddings.len() != texts.len() {
            return Err(EmbeddingError::BackendUnavailable(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                parsed.embeddings.len()
            )));
        }
        parsed
            .embeddings
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(EmbeddingError::DimMismatch {
                        expected: self.dim,
                        got: v.len(),
                    });
                }
                EmbeddingVector::normalized(v)
            })
            .collect()
    }
}

/// Embed a single text through the remote service.
pub fn remote_embed(text: &str, provider: &RemoteEmbedder) -> Result<EmbeddingVector, EmbeddingError> {
    let mut out = provider.embed_batch(&[text.to_string()])?;
    Ok(out.remove(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Sentence,
    Document,
}

/// A retrievable few-shot example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateExample {
    pub id: String,
    pub granularity: Granularity,
    /// Annotated markup with gold `value` attributes.
    pub text: String,
    pub language: String,
    pub source_doc: String,
    pub split: Split,
    /// DCT of the source document, shown on the example's tags.
    pub dct: Option<NaiveDate>,
    /// Gold values of the preceding sentences, shown as `previous_timex`.
    #[serde(default)]
    pub previous_values: Vec<String>,
    pub vector: EmbeddingVector,
}

/// Tag-stripped text of annotated markup, the form that gets embedded.
pub fn strip_tags(markup: &str) -> String {
    match parse_fragment(markup) {
        Ok(f) => f.text,
        Err(_) => markup.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorIndex {
    dim: usize,
    entries: Vec<CandidateExample>,
}

#[derive(Debug, Clone, Copy)]
pub struct Scored<'a> {
    pub candidate: &'a CandidateExample,
    pub score: f64,
}

/// Descending score, then ascending id.
pub(crate) fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

impl VectorIndex {
    pub fn new(dim: usize, mut entries: Vec<CandidateExample>) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::InvalidDimension(dim));
        }
        let mut ids = HashSet::new();
        for e in &entries {
            if e.vector.dim() != dim {
                return Err(EmbeddingError::DimMismatch {
                    expected: dim,
                    got: e.vector.dim(),
                });
            }
            if !ids.insert(e.id.as_str()) {
                return Err(EmbeddingError::InvalidIndex(format!("duplicate id {}", e.id)));
            }
        }
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(VectorIndex { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in ascending id order.
    pub fn entries(&self) -> &[CandidateExample] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&CandidateExample> {
        self.entries
            .binary_search_by(|e| e.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Keep only entries matching `keep`.
    pub fn filtered<F>(&self, keep: F) -> VectorIndex
    where
        F: Fn(&CandidateExample) -> bool,
    {
        VectorIndex {
            dim: self.dim,
            entries: self.entries.iter().filter(|e| keep(e)).cloned().collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbeddingError> {
        let file = IndexFile {
            format: INDEX_FORMAT.to_string(),
            version: INDEX_VERSION,
            dim: self.dim,
            entries: self
                .entries
                .iter()
                .map(|e| IndexEntry {
                    id: e.id.clone(),
                    vector: e.vector.clone(),
                    meta: EntryMeta {
                        granularity: e.granularity,
                        text: e.text.clone(),
                        language: e.language.clone(),
                        source_doc: e.source_doc.clone(),
                        split: e.split,
                        dct: e.dct,
                        previous_values: e.previous_values.clone(),
                    },
                })
                .collect(),
        };
        fs::write(path, serde_json::to_vec_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        let file: IndexFile = serde_json::from_slice(&fs::read(path)?)?;
        if file.format != INDEX_FORMAT || file.version != INDEX_VERSION {
            return Err(EmbeddingError::InvalidIndex(format!(
                "unsupported index format {} v{}",
                file.format, file.version
            )));
        }
        let entries = file
            .entries
            .into_iter()
            .map(|e| CandidateExample {
                id: e.id,
                granularity: e.meta.granularity,
                text: e.meta.text,
                language: e.meta.language,
                source_doc: e.meta.source_doc,
                split: e.meta.split,
                dct: e.meta.dct,
                previous_values: e.meta.previous_values,
                vector: e.vector,
            })
            .collect();
        VectorIndex::new(file.dim, entries)
    }
}

const INDEX_FORMAT: &str = "tempnorm-index";
const INDEX_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    dim: usize,
    entries: Vec<IndexEntry>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    id: String,
    vector: EmbeddingVector,
    meta: EntryMeta,
}

#[derive(Serialize, Deserialize)]
struct EntryMeta {
    granularity: Granularity,
    text: String,
    language: String,
    source_doc: String,
    split: Split,
    #[serde(default)]
    dct: Option<NaiveDate>,
    #[serde(default)]
    previous_values: Vec<String>,
}

/// The `k` entries most similar to `query`, best first; ties go to the
/// smaller id. Returns everything when `k` exceeds the index size.
pub fn top_k_similar<'a>(index: &'a VectorIndex, query: &EmbeddingVector, k: usize) -> Vec<Scored<'a>> {
    if k == 0 || index.is_empty() {
        return Vec::new();
    }
    let mut scored: Vec<Scored<'a>> = index
        .entries
        .iter()
        .map(|candidate| Scored {
            candidate,
            score: candidate.vector.cosine(query),
        })
        .collect();
    let cmp = |a: &Scored, b: &Scored| rank_order(a.score, &a.candidate.id, b.score, &b.candidate.id);
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    scored
}

#[cfg(test)]
mod tests {
    use super::*;

    fn candidate(id: &str, v: Vec<f64>) -> CandidateExample {
        CandidateExample {
            id: id.to_string(),
            granularity: Granularity::Sentence,
            text: String::new(),
            language: "en".into(),
            source_doc: "d".into(),
            split: Split::Train,
            dct: None,
            previous_values: vec![],
            vector: EmbeddingVector::normalized(v).unwrap(),
        }
    }

    #[test]
    fn hash_embedding_is_deterministic_and_unit() {
        let a = hash_embed("abc", 16).unwrap();
        assert_eq!(a, hash_embed("abc", 16).unwrap());
        assert!((a.cosine(&a) - 1.0).abs() < 1e-9);
        assert!(a.cosine(&hash_embed("abd", 16).unwrap()) < 1.0);
    }

    #[test]
    fn empty_text_is_uniform() {
        let v = hash_embed("", 8).unwrap();
        assert!(v.as_slice().iter().all(|x| (x - v.as_slice()[0]).abs() < 1e-15));
        assert!((v.cosine(&v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_dims_rejected() {
        assert!(matches!(hash_embed("x", 7), Err(EmbeddingError::InvalidDimension(7))));
    }

    #[test]
    fn top_k_basics() {
        let index = VectorIndex::new(
            2,
            vec![
                candidate("c", vec![1.0, 0.0]),
                candidate("a", vec![0.0, 1.0]),
                candidate("b", vec![1.0, 0.0]),
            ],
        )
        .unwrap();
        let q = EmbeddingVector::normalized(vec![1.0, 0.0]).unwrap();
        assert!(top_k_similar(&index, &q, 0).is_empty());
        let ids: Vec<_> = top_k_similar(&index, &q, 2)
            .iter()
            .map(|s| s.candidate.id.as_str())
            .collect();
        assert_eq!(ids, ["b", "c"]);
        assert_eq!(top_k_similar(&index, &q, 10).len(), 3);
    }

    #[test]
    fn index_rejects_bad_entries() {
        let dup = VectorIndex::new(2, vec![candidate("a", vec![1.0, 0.0]), candidate("a", vec![0.0, 1.0])]);
        assert!(matches!(dup, Err(EmbeddingError::InvalidIndex(_))));
        let dim = VectorIndex::new(3, vec![candidate("a", vec![1.0, 0.0])]);
        assert!(matches!(dim, Err(EmbeddingError::DimMismatch { expected: 3, got: 2 })));
    }

    #[test]
    fn sidecar_round_trip() {
        let index = VectorIndex::new(2, vec![candidate("x", vec![3.0, 4.0])]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.json");
        index.save(&path).unwrap();
        assert_eq!(VectorIndex::load(&path).unwrap(), index);
    }
}
