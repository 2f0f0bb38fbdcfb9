//! Few-shot example selection and candidate pool assembly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, Split};
use crate::embedding::{dot, top_k_similar, CandidateExample, EmbeddingProvider, Granularity, Scored, VectorIndex};
use crate::error::SelectionError;
use crate::prompting::{context_values, render_annotated};

/// Largest `k` accepted by a default [`SelectionConfig`].
pub const MAX_K: usize = 15;
pub const DEFAULT_THRESHOLD: f64 = 0.7;

const EMBED_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionStrategy {
    ExpertPrompt,
    TargetAgnostic,
    TargetCentricSentence,
    TargetCentricDocument,
    TargetCentricContextWindow,
}

impl SelectionStrategy {
    pub const ALL: [SelectionStrategy; 5] = [
        Self::ExpertPrompt,
        Self::TargetAgnostic,
        Self::TargetCentricSentence,
        Self::TargetCentricDocument,
        Self::TargetCentricContextWindow,
    ];

    /// Granularity of the candidates this strategy retrieves.
    pub fn granularity(self) -> Granularity {
        match self {
            Self::TargetCentricDocument => Granularity::Document,
            _ => Granularity::Sentence,
        }
    }

    /// Whether previous sentences of the target document are shown.
    pub fn uses_context_window(self) -> bool {
        matches!(self, Self::TargetCentricContextWindow)
    }

    pub fn needs_pool(self) -> bool {
        !matches!(self, Self::ExpertPrompt)
    }

    /// Row label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Self::ExpertPrompt => "Expert Prompt",
            Self::TargetAgnostic => "Target-agnostic",
            Self::TargetCentricSentence => "Target-centric (Sent.)",
            Self::TargetCentricDocument => "Target-centric (Doc.)",
            Self::TargetCentricContextWindow => "Target-centric + CW",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ExpertPrompt => "expert-prompt",
            Self::TargetAgnostic => "target-agnostic",
            Self::TargetCentricSentence => "target-centric-sentence",
            Self::TargetCentricDocument => "target-centric-document",
            Self::TargetCentricContextWindow => "target-centric-context-window",
        }
    }
}

impl fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.to_ascii_lowercase();
        let found = match s.as_str() {
            "expert" | "expert-prompt" => Self::ExpertPrompt,
            "agnostic" | "target-agnostic" => Self::TargetAgnostic,
            "sentence" | "centric-sentence" | "target-centric-sentence" => Self::TargetCentricSentence,
            "document" | "centric-document" | "target-centric-document" => Self::TargetCentricDocument,
            "cw" | "centric-cw" | "target-centric-cw" | "target-centric-context-window" => {
                Self::TargetCentricContextWindow
            }
            _ => return Err(format!("unknown strategy {s:?}")),
        };
        Ok(found)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolScopeKind {
    /// Train split of the target language only.
    Monolingual,
    /// Train split of every language.
    Multilingual,
    /// Train and test splits of every language except the target.
    Parallel,
}

impl FromStr for PoolScopeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "monolingual" | "mono" => Ok(Self::Monolingual),
            "multilingual" | "multi" => Ok(Self::Multilingual),
            "parallel" => Ok(Self::Parallel),
            other => Err(format!("unknown pool scope {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolScope {
    pub kind: PoolScopeKind,
    pub target_language: String,
}

impl PoolScope {
    pub fn new(kind: PoolScopeKind, target_language: impl Into<String>) -> Self {
        PoolScope {
            kind,
            target_language: target_language.into(),
        }
    }

    pub fn admits(&self, language: &str, split: Split) -> bool {
        match self.kind {
            PoolScopeKind::Monolingual => split == Split::Train && language == self.target_language,
            PoolScopeKind::Multilingual => split == Split::Train,
            PoolScopeKind::Parallel => language != self.target_language,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub strategy: SelectionStrategy,
    pub k: usize,
    pub dissimilarity_threshold: f64,
    pub pool_scope: PoolScope,
}

impl SelectionConfig {
    pub fn new(strategy: SelectionStrategy, k: usize, pool_scope: PoolScope) -> Self {
        SelectionConfig {
            strategy,
            k,
            dissimilarity_threshold: DEFAULT_THRESHOLD,
            pool_scope,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.k > MAX_K {
            return Err(format!("k = {} exceeds the maximum of {MAX_K}", self.k));
        }
        if !(0.0..=1.0).contains(&self.dissimilarity_threshold) {
            return Err(format!(
                "dissimilarity threshold {} outside [0, 1]",
                self.dissimilarity_threshold
            ));
        }
        Ok(())
    }
}

/// Build the candidate index for a scope.
///
/// Sentence candidates are the TE-bearing sentences; document candidates
/// are TE-bearing documents. Each sentence candidate records the gold values
/// of the `context_window` sentences before it so it can be shown with the
/// same `previous_timex` attribute a target gets.
pub fn assemble_pool(
    corpora: &[Corpus],
    scope: &PoolScope,
    granularity: Granularity,
    provider: &dyn EmbeddingProvider,
    context_window: usize,
) -> Result<VectorIndex, SelectionError> {
    let mut pending: Vec<(CandidateExample, String)> = Vec::new();
    for corpus in corpora {
        for doc in &corpus.documents {
            if !scope.admits(&doc.language, corpus.split) {
                continue;
            }
            match granularity {
                Granularity::Sentence => {
                    pending.extend(sentence_candidates(corpus, doc, context_window));
                }
                Granularity::Document => {
                    if doc.timex_count() == 0 {
                        continue;
                    }
                    let text = doc.sentences.iter().map(render_annotated).collect::<Vec<_>>().join(" ");
                    let plain = doc
                        .sentences
                        .iter()
                        .map(|s| s.text.as_str())
                        .collect::<Vec<_>>()
                        .join(" ");
                    pending.push((
                        candidate(
                            format!("{}/{}", corpus.name, doc.doc_id),
                            granularity,
                            text,
                            corpus,
                            doc,
                            vec![],
                        ),
                        plain,
                    ));
                }
            }
        }
    }
    if pending.is_empty() {
        return Err(SelectionError::EmptyPool);
    }

    let texts: Vec<String> = pending.iter().map(|(_, t)| t.clone()).collect();
    let mut vectors = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(EMBED_BATCH) {
        vectors.extend(provider.embed_batch(chunk)?);
    }
    let entries = pending
        .into_iter()
        .zip(vectors)
        .map(|((mut c, _), v)| {
            c.vector = v;
            c
        })
        .collect();
    Ok(VectorIndex::new(provider.dim(), entries)?)
}

fn sentence_candidates(corpus: &Corpus, doc: &Document, context_window: usize) -> Vec<(CandidateExample, String)> {
    doc.sentences
        .iter()
        .filter(|s| s.has_timexes())
        .map(|s| {
            let from = s.index.saturating_sub(context_window);
            let previous = context_values(
                doc.sentences[from..s.index]
                    .iter()
                    .flat_map(|p| p.timexes.iter().filter_map(|t| t.value.as_deref())),
            );
            let c = candidate(
                format!("{}/{}#{}", corpus.name, doc.doc_id, s.index),
                Granularity::Sentence,
                render_annotated(s),
                corpus,
                doc,
                previous,
            );
            (c, s.text.clone())
        })
        .collect()
}

fn candidate(
    id: String,
    granularity: Granularity,
    text: String,
    corpus: &Corpus,
    doc: &Document,
    previous_values: Vec<String>,
) -> CandidateExample {
    CandidateExample {
        id,
        granularity,
        text,
        language: doc.language.clone(),
        source_doc: doc.doc_id.clone(),
        split: corpus.split,
        dct: Some(doc.dct),
        previous_values,
        vector: crate::embedding::EmbeddingVector::placeholder(),
    }
}

/// Greedy max-min diversity selection.
///
/// The seed is the candidate with the lowest mean similarity to the whole
/// pool. Each further pick is the candidate whose highest similarity to the
/// picks so far is lowest; candidates above `threshold` against any pick
/// are never admitted. Ties go to the smaller id. May return fewer than `k`.
pub fn select_target_agnostic(index: &VectorIndex, k: usize, threshold: f64) -> Vec<Scored<'_>> {
    let entries = index.entries();
    let n = entries.len();
    if k == 0 || n == 0 {
        return Vec::new();
    }

    let mut centroid = vec![0.0; index.dim()];
    for e in entries {
        for (c, x) in centroid.iter_mut().zip(e.vector.as_slice()) {
            *c += x;
        }
    }
    let mut seed = 0;
    let mut seed_mean = f64::INFINITY;
    for (i, e) in entries.iter().enumerate() {
        let mean = dot(e.vector.as_slice(), &centroid) / n as f64;
        if mean < seed_mean {
            seed = i;
            seed_mean = mean;
        }
    }

    let mut selected = vec![Scored {
        candidate: &entries[seed],
        score: seed_mean,
    }];
    let mut taken = vec![false; n];
    taken[seed] = true;
    let mut max_sim = vec![f64::NEG_INFINITY; n];
    let mut last = seed;

    while selected.len() < k {
        let pivot = entries[last].vector.as_slice();
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in entries.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let s = e.vector.cosine_slice(pivot);
            if s > max_sim[i] {
                max_sim[i] = s;
            }
            if max_sim[i] > threshold {
                continue;
            }
            if best.is_none_or(|(_, b)| max_sim[i] < b) {
                best = Some((i, max_sim[i]));
            }
        }
        let Some((pick, score)) = best else {
            log::info!(
                "target-agnostic selection stopped at {} of {k}: no admissible candidate",
                selected.len()
            );
            break;
        };
        taken[pick] = true;
        selected.push(Scored {
            candidate: &entries[pick],
            score,
        });
        last = pick;
    }
    selected
}

/// The `k` candidates most similar to the target text, skipping any that
/// come from `exclude_doc`.
pub fn select_target_centric<'a>(
    index: &'a VectorIndex,
    target_text: &str,
    k: usize,
    granularity: Granularity,
    provider: &dyn EmbeddingProvider,
    exclude_doc: Option<&str>,
) -> Result<Vec<Scored<'a>>, SelectionError> {
    if k == 0 {
        return Ok(Vec::new());
    }
    if index.is_empty() {
        return Err(SelectionError::EmptyPool);
    }
    if let Some(e) = index.entries().first() {
        if e.granularity != granularity {
            log::warn!(
                "index holds {:?} candidates but {:?} was requested",
                e.granularity,
                granularity
            );
        }
    }
    let query = provider.embed(&crate::embedding::strip_tags(target_text))?;
    if query.dim() != index.dim() {
        return Err(crate::error::EmbeddingError::DimMismatch {
            expected: index.dim(),
            got: query.dim(),
        }
        .into());
    }
    match exclude_doc {
        None => Ok(top_k_similar(index, &query, k)),
        Some(doc) => {
            // over-fetch, then drop same-document hits; the order of the rest is unchanged
            let leaked = index.entries().iter().filter(|e| e.source_doc == doc).count();
            Ok(top_k_similar(index, &query, k + leaked)
                .into_iter()
                .filter(|s| s.candidate.source_doc != doc)
                .take(k)
                .collect())
        }
    }
}

/// One line of the selection audit file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionAudit {
    pub target_id: String,
    pub selected_ids: Vec<String>,
    pub scores: Vec<f64>,
}

impl SelectionAudit {
    pub fn new(target_id: impl Into<String>, picks: &[Scored<'_>]) -> Self {
        SelectionAudit {
            target_id: target_id.into(),
            selected_ids: picks.iter().map(|s| s.candidate.id.clone()).collect(),
            scores: picks.iter().map(|s| s.score).collect(),
        }
    }
}
