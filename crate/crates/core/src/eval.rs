//! Scoring: value accuracy, extraction P/R/F1 and run aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendFailure, FailureHistogram, NormalizationOutcome};
use crate::corpus::{RealizationClass, TemporalType};
use crate::error::PipelineError;

/// Outcome for one gold expression.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub doc_id: String,
    pub sentence_index: usize,
    pub tid: String,
    pub ttype: TemporalType,
    pub text: String,
    pub gold_value: Option<String>,
    pub predicted_value: Option<String>,
    /// Set when the sentence holding this expression failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<BackendFailure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realization: Option<RealizationClass>,
}

impl PredictionRecord {
    pub fn is_correct(&self) -> bool {
        match (&self.gold_value, &self.predicted_value) {
            (Some(g), Some(p)) => self.failure.is_none() && g.trim() == p.trim(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

impl Tally {
    fn add(&mut self, correct: bool) {
        self.total += 1;
        self.correct += usize::from(correct);
        self.accuracy = self.correct as f64 / self.total as f64;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// True when there was nothing to score; accuracy is then 0.
    pub empty: bool,
    pub per_type: BTreeMap<TemporalType, Tally>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_realization: Option<BTreeMap<RealizationClass, Tally>>,
    /// Sentence-level outcome counts.
    pub failures: FailureHistogram,
}

/// Exact-match value accuracy. Expressions without a gold value are not
/// scored; expressions in failed sentences count as wrong. Failures are
/// counted once per sentence.
pub fn value_accuracy(records: &[PredictionRecord]) -> AccuracyReport {
    let mut total = Tally::default();
    let mut per_type: BTreeMap<TemporalType, Tally> = BTreeMap::new();
    let mut per_real: BTreeMap<RealizationClass, Tally> = BTreeMap::new();
    let mut sentences: BTreeMap<(&str, usize), Option<&BackendFailure>> = BTreeMap::new();
    for r in records {
        let slot = sentences.entry((r.doc_id.as_str(), r.sentence_index)).or_insert(None);
        if slot.is_none() {
            *slot = r.failure.as_ref();
        }
        if r.gold_value.is_none() {
            continue;
        }
        let ok = r.is_correct();
        total.add(ok);
        per_type.entry(r.ttype).or_default().add(ok);
        if let Some(class) = r.realization {
            per_real.entry(class).or_default().add(ok);
        }
    }
    let mut failures = FailureHistogram::default();
    for f in sentences.values() {
        let outcome = match f {
            Some(f) => NormalizationOutcome::Failure((*f).clone()),
            None => NormalizationOutcome::Values(BTreeMap::new()),
        };
        failures.add(&outcome);
    }
    AccuracyReport {
        total: total.total,
        correct: total.correct,
        accuracy: total.accuracy,
        empty: total.total == 0,
        per_type,
        per_realization: (!per_real.is_empty()).then_some(per_real),
        failures,
    }
}

/// A character span in a document, with the value assigned to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSpan {
    pub doc_id: String,
    pub begin: usize,
    pub end: usize,
    pub value: Option<String>,
}

impl TaggedSpan {
    fn overlaps(&self, other: &TaggedSpan) -> bool {
        self.begin < other.end && other.begin < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaggingReport {
    pub gold: usize,
    pub predicted: usize,
    pub strict_matches: usize,
    pub relaxed_matches: usize,
    pub value_matches: usize,
    pub strict_precision: f64,
    pub strict_recall: f64,
    pub strict_f1: f64,
    pub relaxed_precision: f64,
    pub relaxed_recall: f64,
    pub relaxed_f1: f64,
    pub value_f1: f64,
}

/// Precision, recall and F1. With nothing on either side all three are 1.
pub fn prf(matches: usize, predicted: usize, gold: usize) -> (f64, f64, f64) {
    let ratio = |n: usize, d: usize, other: usize| {
        if d > 0 {
            n as f64 / d as f64
        } else if other == 0 {
            1.0
        } else {
            0.0
        }
    };
    let p = ratio(matches, predicted, gold);
    let r = ratio(matches, gold, predicted);
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f)
}

fn by_doc(spans: &[TaggedSpan]) -> BTreeMap<&str, Vec<&TaggedSpan>> {
    let mut m: BTreeMap<&str, Vec<&TaggedSpan>> = BTreeMap::new();
    for s in spans {
        m.entry(s.doc_id.as_str()).or_default().push(s);
    }
    for v in m.values_mut() {
        v.sort_by_key(|s| (s.begin, s.end));
    }
    m
}

/// Greedy one-to-one matching in span order: each prediction takes the
/// first unmatched gold span it satisfies.
fn greedy<F>(gold: &[&TaggedSpan], pred: &[&TaggedSpan], accept: F) -> Vec<(usize, usize)>
where
    F: Fn(&TaggedSpan, &TaggedSpan) -> bool,
{
    let mut used = vec![false; gold.len()];
    let mut pairs = Vec::new();
    for (pi, p) in pred.iter().enumerate() {
        if let Some(gi) = (0..gold.len()).find(|&gi| !used[gi] && accept(gold[gi], p)) {
            used[gi] = true;
            pairs.push((gi, pi));
        }
    }
    pairs
}

/// Extraction scores. Strict needs identical spans, relaxed any overlap; the
/// value score counts relaxed pairs whose values agree exactly.
pub fn extraction_prf(gold: &[TaggedSpan], predicted: &[TaggedSpan]) -> Result<TaggingReport, PipelineError> {
    let gold_docs = by_doc(gold);
    let pred_docs = by_doc(predicted);
    for (doc, spans) in &pred_docs {
        if spans.windows(2).any(|w| w[0].overlaps(w[1])) {
            return Err(PipelineError::Input(format!("overlapping predicted spans in {doc}")));
        }
    }
    let (mut strict, mut relaxed, mut values) = (0, 0, 0);
    let docs: BTreeSet<&str> = gold_docs.keys().chain(pred_docs.keys()).copied().collect();
    for doc in docs {
        let g = gold_docs.get(doc).map(Vec::as_slice).unwrap_or(&[]);
        let p = pred_docs.get(doc).map(Vec::as_slice).unwrap_or(&[]);
        strict += greedy(g, p, |a, b| a.begin == b.begin && a.end == b.end).len();
        for (gi, pi) in greedy(g, p, TaggedSpan::overlaps) {
            relaxed += 1;
            if let (Some(a), Some(b)) = (&g[gi].value, &p[pi].value) {
                values += usize::from(a.trim() == b.trim());
            }
        }
    }
    let (sp, sr, sf) = prf(strict, predicted.len(), gold.len());
    let (rp, rr, rf) = prf(relaxed, predicted.len(), gold.len());
    let (_, _, vf) = prf(values, predicted.len(), gold.len());
    Ok(TaggingReport {
        gold: gold.len(),
        predicted: predicted.len(),
        strict_matches: strict,
        relaxed_matches: relaxed,
        value_matches: values,
        strict_precision: sp,
        strict_recall: sr,
        strict_f1: sf,
        relaxed_precision: rp,
        relaxed_recall: rr,
        relaxed_f1: rf,
        value_f1: vf,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub runs: usize,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub stdev: f64,
    pub failures: FailureHistogram,
}

/// Mean and sample stdev of accuracy over runs; failure counts are summed.
pub fn aggregate_runs(reports: &[AccuracyReport]) -> RunAggregate {
    let (mut n, mut mean, mut m2) = (0usize, 0.0f64, 0.0f64);
    let mut failures = FailureHistogram::default();
    for r in reports {
        n += 1;
        let delta = r.accuracy - mean;
        mean += delta / n as f64;
        m2 += delta * (r.accuracy - mean);
        failures.merge(&r.failures);
    }
    RunAggregate {
        runs: n,
        accuracies: reports.iter().map(|r| r.accuracy).collect(),
        mean,
        stdev: if n > 1 { (m2 / (n - 1) as f64).sqrt() } else { 0.0 },
        failures,
    }
}

/// One cell of the strategy × corpus accuracy table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub strategy: String,
    pub k: Option<usize>,
    pub corpus: String,
    pub accuracy: f64,
}

/// Aligned text table: one row per strategy, one column per corpus, cells
/// show accuracy in percent with the example count in parentheses.
pub fn render_table(cells: &[TableCell]) -> String {
    let mut strategies: Vec<&str> = Vec::new();
    let mut corpora: Vec<&str> = Vec::new();
    for c in cells {
        if !strategies.contains(&c.strategy.as_str()) {
            strategies.push(&c.strategy);
        }
        if !corpora.contains(&c.corpus.as_str()) {
            corpora.push(&c.corpus);
        }
    }
    let cell = |s: &str, corpus: &str| -> String {
        cells
            .iter()
            .find(|c| c.strategy == s && c.corpus == corpus)
            .map(|c| match c.k {
                Some(k) => format!("{:.1} ({k})", c.accuracy * 100.0),
                None => format!("{:.1}", c.accuracy * 100.0),
            })
            .unwrap_or_else(|| "-".into())
    };
    let mut rows: Vec<Vec<String>> = vec![std::iter::once("Strategy".to_string())
        .chain(corpora.iter().map(|c| c.to_string()))
        .collect()];
    for s in &strategies {
        rows.push(
            std::iter::once(s.to_string())
                .chain(corpora.iter().map(|c| cell(s, c)))
                .collect(),
        );
    }
    let widths: Vec<usize> = (0..=corpora.len())
        .map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (ri, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if i == 0 {
                    format!("{v:<w$}", w = widths[i])
                } else {
                    format!("{v:>w$}", w = widths[i])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if ri == 0 {
            let total: usize = widths.iter().sum::<usize>() + 2 * corpora.len();
            let _ = writeln!(out, "{}", "-".repeat(total));
        }
    }
    out
}
