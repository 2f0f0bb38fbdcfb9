//! End-to-end experiment runner.
//!
//! Documents are processed in parallel; the sentences of one document are
//! processed strictly in order, because each prompt reads the running record
//! left by the sentences before it.
//!
//! Artifacts written to the output directory, per run `r`:
//!
//! | file | content |
//! |------|---------|
//! | `predictions.run{r}.jsonl` | one [`PredictionRecord`] per gold expression |
//! | `audit.run{r}.jsonl` | one [`AuditEntry`] per prompted sentence |
//! | `failures.json` | per-run and summed failure histograms |
//! | `report.json`, `report.txt` | [`ExperimentReport`] |

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{
    build_backend, parse_response, BackendConfig, BackendFailure, ChatBackend, FailureHistogram, NormalizationOutcome,
};
use crate::corpus::{load_manifest, Corpus, Document, Sentence, Span, Split, TemporalType, Timex};
use crate::embedding::{
    CandidateExample, EmbeddingProvider, Granularity, HashEmbedder, RemoteEmbedder, Scored, VectorIndex,
};
use crate::error::{PipelineError, PromptError};
use crate::eval::{
    aggregate_runs, extraction_prf, render_table, value_accuracy, AccuracyReport, PredictionRecord, RunAggregate,
    TableCell, TaggedSpan, TaggingReport,
};
use crate::prompting::{build_prompt, ContextWindow, PromptBundle, PromptConfig, RunningRecord, DEFAULT_WINDOW_LENGTH};
use crate::selection::{
    assemble_pool, select_target_agnostic, select_target_centric, PoolScope, PoolScopeKind, SelectionAudit,
    SelectionStrategy, DEFAULT_THRESHOLD, MAX_K,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provider", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EmbeddingConfig {
    Hash {
        dim: usize,
    },
    Remote {
        endpoint: String,
        model: String,
        dim: usize,
    },
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig::Hash { dim: 256 }
    }
}

impl EmbeddingConfig {
    pub fn build(&self) -> Result<Box<dyn EmbeddingProvider>, PipelineError> {
        Ok(match self {
            EmbeddingConfig::Hash { dim } => Box::new(HashEmbedder::new(*dim)?),
            EmbeddingConfig::Remote { endpoint, model, dim } => {
                Box::new(RemoteEmbedder::new(endpoint.clone(), model.clone(), *dim)?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Corpus manifests; the pool and the targets are both drawn from them.
    pub manifests: Vec<PathBuf>,
    /// Targets are the test documents in this language.
    pub target_language: String,
    /// Restrict targets to the corpus with this name (a manifest's file stem).
    pub target_corpus: Option<String>,
    /// DCT for documents that carry none.
    pub default_dct: Option<NaiveDate>,
    pub strategy: SelectionStrategy,
    pub k: usize,
    pub dissimilarity_threshold: f64,
    pub window_length: usize,
    pub pool_scope: PoolScopeKind,
    pub backend: BackendConfig,
    pub embedding: EmbeddingConfig,
    pub output_dir: PathBuf,
    pub runs: usize,
    /// Document workers; 0 picks the number of cores.
    pub workers: usize,
    pub dump_prompts: Option<PathBuf>,
    pub resume: bool,
    /// Load the candidate index from here if it exists.
    pub index_path: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            manifests: Vec::new(),
            target_language: "en".into(),
            target_corpus: None,
            default_dct: None,
            strategy: SelectionStrategy::TargetCentricContextWindow,
            k: 5,
            dissimilarity_threshold: DEFAULT_THRESHOLD,
            window_length: DEFAULT_WINDOW_LENGTH,
            pool_scope: PoolScopeKind::Monolingual,
            backend: BackendConfig::default(),
            embedding: EmbeddingConfig::default(),
            output_dir: PathBuf::from("out"),
            runs: 3,
            workers: 0,
            dump_prompts: None,
            resume: false,
            index_path: None,
        }
    }
}

impl ExperimentConfig {
    /// Make relative paths relative to `base` (the config file's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.manifests.iter_mut().for_each(fix);
        fix(&mut self.output_dir);
        for p in [
            &mut self.dump_prompts,
            &mut self.index_path,
            &mut self.backend.replay_path,
            &mut self.backend.record_path,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.manifests.is_empty() {
            return bad("no corpus manifests given".into());
        }
        if let Some(missing) = self.manifests.iter().find(|p| !p.exists()) {
            return bad(format!("manifest {} does not exist", missing.display()));
        }
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.strategy.needs_pool() && (self.k == 0 || self.k > MAX_K) {
            return bad(format!("k must be in 1..={MAX_K}, got {}", self.k));
        }
        if !(0.0..=1.0).contains(&self.dissimilarity_threshold) {
            return bad(format!("threshold {} is outside [0, 1]", self.dissimilarity_threshold));
        }
        if self.backend.max_input_tokens == 0 {
            return bad("max_input_tokens must be positive".into());
        }
        Ok(())
    }

    pub fn scope(&self) -> PoolScope {
        PoolScope::new(self.pool_scope, self.target_language.clone())
    }

    /// Window length actually used; only the context-window strategy has one.
    pub fn effective_window(&self) -> usize {
        if self.strategy.uses_context_window() {
            self.window_length
        } else {
            0
        }
    }
}

/// Everything one experiment needs, loaded once and shared by all runs.
pub struct Workspace {
    pub config: ExperimentConfig,
    pub corpora: Vec<Corpus>,
    pub provider: Box<dyn EmbeddingProvider>,
    pub index: Option<VectorIndex>,
}

impl Workspace {
    pub fn load(config: &ExperimentConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let mut corpora = Vec::new();
        for m in &config.manifests {
            corpora.extend(load_manifest(m, config.default_dct)?);
        }
        let provider = config.embedding.build()?;
        let index = if config.strategy.needs_pool() {
            Some(load_or_build_index(config, &corpora, provider.as_ref())?)
        } else {
            None
        };
        let ws = Workspace {
            config: config.clone(),
            corpora,
            provider,
            index,
        };
        if ws.targets().is_empty() {
            return Err(PipelineError::Config(format!(
                "no test documents in language {:?}",
                config.target_language
            )));
        }
        Ok(ws)
    }

    /// Target documents in manifest order.
    pub fn targets(&self) -> Vec<&Document> {
        self.corpora
            .iter()
            .filter(|c| c.split == Split::Test)
            .filter(|c| self.config.target_corpus.as_ref().is_none_or(|n| *n == c.name))
            .flat_map(|c| c.documents.iter())
            .filter(|d| d.language == self.config.target_language)
            .collect()
    }
}

fn load_or_build_index(
    config: &ExperimentConfig,
    corpora: &[Corpus],
    provider: &dyn EmbeddingProvider,
) -> Result<VectorIndex, PipelineError> {
    if let Some(p) = config.index_path.as_ref().filter(|p| p.exists()) {
        log::info!("loading candidate index from {}", p.display());
        let index = VectorIndex::load(p)?;
        if index.dim() != provider.dim() {
            return Err(PipelineError::Config(format!(
                "index {} has dimension {}, embedder has {}",
                p.display(),
                index.dim(),
                provider.dim()
            )));
        }
        return Ok(index);
    }
    build_index(config, corpora, provider)
}

/// Build the candidate pool for the configured scope and strategy.
pub fn build_index(
    config: &ExperimentConfig,
    corpora: &[Corpus],
    provider: &dyn EmbeddingProvider,
) -> Result<VectorIndex, PipelineError> {
    Ok(assemble_pool(
        corpora,
        &config.scope(),
        config.strategy.granularity(),
        provider,
        config.effective_window(),
    )?)
}

/// One prompted sentence, as logged for replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub doc_id: String,
    pub sentence_index: usize,
    pub prompt_sha256: String,
    pub token_estimate: usize,
    pub window_indices: Vec<usize>,
    pub previous_values: Vec<String>,
    /// Running record size when the prompt was built.
    pub record_entries: usize,
    pub selection: SelectionAudit,
    pub outcome: String,
}

struct DocResult {
    doc_id: String,
    records: Vec<PredictionRecord>,
    audits: Vec<AuditEntry>,
}

/// Per-run state shared by the document workers.
struct RunContext<'a> {
    ws: &'a Workspace,
    backend: &'a dyn ChatBackend,
    agnostic: Option<Vec<Scored<'a>>>,
    leak_guard: bool,
    dump_dir: Option<PathBuf>,
}

impl<'a> RunContext<'a> {
    fn new(ws: &'a Workspace, backend: &'a dyn ChatBackend, run: usize) -> Self {
        let cfg = &ws.config;
        let agnostic = match (cfg.strategy, &ws.index) {
            (SelectionStrategy::TargetAgnostic, Some(index)) => {
                Some(select_target_agnostic(index, cfg.k, cfg.dissimilarity_threshold))
            }
            _ => None,
        };
        // a pool that may hold target-language test documents must not show a
        // target its own document
        let leak_guard = ws.index.as_ref().is_some_and(|i| {
            i.entries()
                .iter()
                .any(|e| e.split == Split::Test && e.language == cfg.target_language)
        });
        RunContext {
            ws,
            backend,
            agnostic,
            leak_guard,
            dump_dir: cfg.dump_prompts.as_ref().map(|d| d.join(format!("run{run}"))),
        }
    }

    fn select(&self, doc: &Document, sentence: &Sentence) -> Result<Vec<Scored<'a>>, PipelineError> {
        let cfg = &self.ws.config;
        if let Some(picks) = &self.agnostic {
            return Ok(picks.clone());
        }
        let Some(index) = &self.ws.index else {
            return Ok(Vec::new());
        };
        let granularity = cfg.strategy.granularity();
        let text = match granularity {
            Granularity::Sentence => sentence.text.clone(),
            Granularity::Document => doc
                .sentences
                .iter()
                .map(|s| s.text.as_str())
                .collect::<Vec<_>>()
                .join(" "),
        };
        let exclude = self.leak_guard.then_some(doc.doc_id.as_str());
        Ok(select_target_centric(
            index,
            &text,
            cfg.k,
            granularity,
            self.ws.provider.as_ref(),
            exclude,
        )?)
    }

    fn process(&self, doc: &Document) -> Result<DocResult, PipelineError> {
        let cfg = &self.ws.config;
        let window_len = cfg.effective_window();
        let prompt_cfg = PromptConfig {
            max_input_tokens: cfg.backend.max_input_tokens,
        };
        let mut record = RunningRecord::new(doc.doc_id.clone(), doc.dct);
        let mut records = Vec::with_capacity(doc.timex_count());
        let mut audits = Vec::new();
        let mut doc_selection: Option<Vec<Scored<'a>>> = None;

        for sentence in doc.sentences.iter().filter(|s| s.has_timexes()) {
            let picks = match (cfg.strategy.granularity(), &doc_selection) {
                (Granularity::Document, Some(p)) => p.clone(),
                _ => {
                    let p = self.select(doc, sentence)?;
                    doc_selection = Some(p.clone());
                    p
                }
            };
            let examples: Vec<&CandidateExample> = picks.iter().map(|s| s.candidate).collect();
            let window = ContextWindow::build(doc, sentence.index, window_len, &record);
            let record_entries = record.entries.len();

            let (outcome, digest, estimate) =
                match build_prompt(cfg.strategy, &examples, sentence, &record, &window, &prompt_cfg) {
                    Ok(bundle) => {
                        self.dump(&bundle)?;
                        let outcome = match self.backend.complete(&bundle) {
                            Ok(raw) => parse_response(&raw, &bundle.expected_phrases()),
                            Err(BackendFailure::BackendUnavailable { detail }) => {
                                return Err(PipelineError::BackendFatal(detail));
                            }
                            Err(f) => NormalizationOutcome::Failure(f),
                        };
                        (outcome, bundle.digest(), bundle.token_estimate)
                    }
                    Err(PromptError::ContextExceeded { estimate, limit }) => (
                        NormalizationOutcome::Failure(BackendFailure::ContextExceeded { estimate, limit }),
                        String::new(),
                        estimate,
                    ),
                    Err(e) => return Err(e.into()),
                };

            let mut accepted = Vec::new();
            for t in &sentence.timexes {
                let (predicted, failure) = match &outcome {
                    NormalizationOutcome::Values(map) => {
                        let v = map.get(&t.text).map(|v| v.trim().to_string()).filter(|v| !v.is_empty());
                        (v, None)
                    }
                    NormalizationOutcome::Failure(f) => (None, Some(f.clone())),
                };
                if let Some(v) = &predicted {
                    accepted.push((t.tid.clone(), v.clone()));
                }
                records.push(PredictionRecord {
                    doc_id: doc.doc_id.clone(),
                    sentence_index: sentence.index,
                    tid: t.tid.clone(),
                    ttype: t.ttype,
                    text: t.text.clone(),
                    gold_value: t.value.clone(),
                    predicted_value: predicted,
                    failure,
                    realization: doc.realization_labels.get(&t.tid).copied(),
                });
            }
            record.update(sentence.index, &accepted)?;
            audits.push(AuditEntry {
                doc_id: doc.doc_id.clone(),
                sentence_index: sentence.index,
                prompt_sha256: digest,
                token_estimate: estimate,
                window_indices: window.indices(),
                previous_values: window.values.clone(),
                record_entries,
                selection: SelectionAudit::new(format!("{}#{}", doc.doc_id, sentence.index), &picks),
                outcome: outcome.failure().map(|f| f.label()).unwrap_or("success").to_string(),
            });
        }
        Ok(DocResult {
            doc_id: doc.doc_id.clone(),
            records,
            audits,
        })
    }

    fn dump(&self, bundle: &PromptBundle) -> Result<(), PipelineError> {
        let Some(dir) = &self.dump_dir else {
            return Ok(());
        };
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        let path = dir.join(format!(
            "{}.s{:04}.txt",
            file_safe(&bundle.doc_id),
            bundle.sentence_index
        ));
        fs::write(&path, bundle.transcript()).map_err(|e| PipelineError::io(&path, e))
    }
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub strategy: SelectionStrategy,
    pub k: usize,
    pub window_length: usize,
    pub pool_scope: PoolScopeKind,
    pub runs: Vec<AccuracyReport>,
    pub aggregate: RunAggregate,
}

impl ExperimentReport {
    pub fn accuracy(&self) -> f64 {
        self.aggregate.mean
    }

    pub fn failures(&self) -> FailureHistogram {
        self.aggregate.failures
    }

    pub fn table(&self) -> String {
        let k = self.strategy.needs_pool().then_some(self.k);
        let mut out = render_table(&[TableCell {
            strategy: self.strategy.label().to_string(),
            k,
            corpus: self.name.clone(),
            accuracy: self.aggregate.mean,
        }]);
        out.push_str(&format!(
            "\nruns: {}  mean: {:.4}  stdev: {:.4}\n",
            self.aggregate.runs, self.aggregate.mean, self.aggregate.stdev
        ));
        let f = &self.aggregate.failures;
        out.push_str(&format!(
            "sentences: {} ok, {} InvalidJson, {} ContextExceeded, {} MissingKeys, {} BackendUnavailable\n",
            f.success, f.invalid_json, f.context_exceeded, f.missing_keys, f.backend_unavailable
        ));
        if let Some(first) = self.runs.first() {
            for (t, tally) in &first.per_type {
                out.push_str(&format!(
                    "{t:<9} {}/{} = {:.4}\n",
                    tally.correct, tally.total, tally.accuracy
                ));
            }
            if let Some(real) = &first.per_realization {
                for (c, tally) in real {
                    out.push_str(&format!(
                        "{c:<14} {} correct, {} wrong\n",
                        tally.correct,
                        tally.total - tally.correct
                    ));
                }
            }
        }
        out
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            // a torn last line from an interrupted run
            Err(e) if i + 1 == text.lines().count() => log::warn!("{}: dropping bad last line: {e}", path.display()),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let mut buf = String::new();
    for it in items {
        buf.push_str(&serde_json::to_string(it)?);
        buf.push('\n');
    }
    let tmp = path.with_extension("jsonl.tmp");
    fs::write(&tmp, buf).map_err(|e| PipelineError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
}

fn append_block<T: Serialize>(file: &Mutex<fs::File>, path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let mut buf = String::new();
    for it in items {
        buf.push_str(&serde_json::to_string(it)?);
        buf.push('\n');
    }
    let mut f = file.lock().unwrap_or_else(|e| e.into_inner());
    f.write_all(buf.as_bytes()).map_err(|e| PipelineError::io(path, e))
}

pub fn predictions_path(dir: &Path, run: usize) -> PathBuf {
    dir.join(format!("predictions.run{run}.jsonl"))
}

pub fn audit_path(dir: &Path, run: usize) -> PathBuf {
    dir.join(format!("audit.run{run}.jsonl"))
}

/// Run one pass over the targets and return its predictions in document order.
pub fn run_once(ws: &Workspace, run: usize) -> Result<Vec<PredictionRecord>, PipelineError> {
    let cfg = &ws.config;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| PipelineError::io(out, e))?;
    let pred_path = predictions_path(out, run);
    let audit_file = audit_path(out, run);
    let targets = ws.targets();

    // documents already complete in an earlier, interrupted run
    let mut done_records: HashMap<String, Vec<PredictionRecord>> = HashMap::new();
    let mut done_audits: HashMap<String, Vec<AuditEntry>> = HashMap::new();
    if cfg.resume && pred_path.exists() && audit_file.exists() {
        for r in read_jsonl::<PredictionRecord>(&pred_path)? {
            done_records.entry(r.doc_id.clone()).or_default().push(r);
        }
        for a in read_jsonl::<AuditEntry>(&audit_file)? {
            done_audits.entry(a.doc_id.clone()).or_default().push(a);
        }
        let expected: HashMap<&str, &Document> = targets.iter().map(|d| (d.doc_id.as_str(), *d)).collect();
        done_records.retain(|id, recs| {
            expected.get(id.as_str()).is_some_and(|d| {
                let prompted = d.sentences.iter().filter(|s| s.has_timexes()).count();
                recs.len() == d.timex_count() && done_audits.get(id).is_some_and(|a| a.len() == prompted)
            })
        });
        done_audits.retain(|id, _| done_records.contains_key(id));
        log::info!("run {run}: resuming with {} finished documents", done_records.len());
    }

    let mut backend_cfg = cfg.backend.clone();
    backend_cfg.run_seed = run as u64;
    let gold: Vec<Document> = targets.iter().map(|d| (*d).clone()).collect();
    let backend = build_backend(&backend_cfg, &gold)?;
    let ctx = RunContext::new(ws, backend.as_ref(), run);

    let open = |p: &Path| -> Result<Mutex<fs::File>, PipelineError> {
        let f = fs::OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(p)
            .map_err(|e| PipelineError::io(p, e))?;
        Ok(Mutex::new(f))
    };
    let pred_out = open(&pred_path)?;
    let audit_out = open(&audit_file)?;
    for d in &targets {
        if let (Some(r), Some(a)) = (done_records.get(&d.doc_id), done_audits.get(&d.doc_id)) {
            append_block(&pred_out, &pred_path, r)?;
            append_block(&audit_out, &audit_file, a)?;
        }
    }

    let todo: Vec<&Document> = targets
        .iter()
        .filter(|d| !done_records.contains_key(&d.doc_id))
        .copied()
        .collect();
    let fresh: Mutex<Vec<DocResult>> = Mutex::new(Vec::new());
    let work = || {
        todo.par_iter().try_for_each(|doc| -> Result<(), PipelineError> {
            let res = ctx.process(doc)?;
            append_block(&pred_out, &pred_path, &res.records)?;
            append_block(&audit_out, &audit_file, &res.audits)?;
            fresh.lock().unwrap_or_else(|e| e.into_inner()).push(res);
            Ok(())
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
    pool.install(work)?;

    for res in fresh.into_inner().unwrap_or_else(|e| e.into_inner()) {
        done_records.insert(res.doc_id.clone(), res.records);
        done_audits.insert(res.doc_id, res.audits);
    }
    // canonical order so repeated runs are byte-identical
    let mut records = Vec::new();
    let mut audits = Vec::new();
    for d in &targets {
        records.extend(done_records.remove(&d.doc_id).unwrap_or_default());
        audits.extend(done_audits.remove(&d.doc_id).unwrap_or_default());
    }
    write_jsonl(&pred_path, &records)?;
    write_jsonl(&audit_file, &audits)?;
    Ok(records)
}

/// Run every configured run, score them and write the reports.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, PipelineError> {
    let ws = Workspace::load(config)?;
    run_workspace(&ws)
}

pub fn run_workspace(ws: &Workspace) -> Result<ExperimentReport, PipelineError> {
    let cfg = &ws.config;
    let mut reports = Vec::with_capacity(cfg.runs);
    for run in 1..=cfg.runs {
        let records = run_once(ws, run)?;
        reports.push(value_accuracy(&records));
    }
    let aggregate = aggregate_runs(&reports);
    let report = ExperimentReport {
        name: cfg.name.clone(),
        strategy: cfg.strategy,
        k: cfg.k,
        window_length: cfg.effective_window(),
        pool_scope: cfg.pool_scope,
        runs: reports,
        aggregate,
    };
    let out = &cfg.output_dir;
    let failures = serde_json::json!({
        "per_run": report.runs.iter().map(|r| r.failures).collect::<Vec<_>>(),
        "total": report.aggregate.failures,
    });
    write_file(&out.join("failures.json"), &serde_json::to_string_pretty(&failures)?)?;
    write_file(&out.join("report.json"), &serde_json::to_string_pretty(&report)?)?;
    write_file(&out.join("report.txt"), &report.table())?;
    Ok(report)
}

fn write_file(path: &Path, content: &str) -> Result<(), PipelineError> {
    fs::write(path, content).map_err(|e| PipelineError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    K,
    WindowLength,
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "k" => Ok(SweepAxis::K),
            "window" | "window-length" | "window_length" => Ok(SweepAxis::WindowLength),
            other => Err(format!("unknown sweep axis {other:?} (expected k or window)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: usize,
    pub mean: f64,
    pub stdev: f64,
    pub failures: FailureHistogram,
}

/// One experiment per value, each in its own subdirectory, plus a CSV.
pub fn sweep(config: &ExperimentConfig, axis: SweepAxis, values: &[usize]) -> Result<Vec<SweepRow>, PipelineError> {
    if values.is_empty() {
        return Err(PipelineError::Config("sweep needs at least one value".into()));
    }
    let name = match axis {
        SweepAxis::K => "k",
        SweepAxis::WindowLength => "window",
    };
    let mut rows = Vec::new();
    for &v in values {
        let mut cfg = config.clone();
        match axis {
            SweepAxis::K => cfg.k = v,
            SweepAxis::WindowLength => cfg.window_length = v,
        }
        cfg.output_dir = config.output_dir.join(format!("{name}-{v}"));
        let report = run_experiment(&cfg)?;
        rows.push(SweepRow {
            value: v,
            mean: report.aggregate.mean,
            stdev: report.aggregate.stdev,
            failures: report.aggregate.failures,
        });
    }
    let mut csv =
        format!("{name},accuracy,stdev,success,invalid_json,context_exceeded,missing_keys,backend_unavailable\n");
    for r in &rows {
        let f = &r.failures;
        csv.push_str(&format!(
            "{},{:.6},{:.6},{},{},{},{},{}\n",
            r.value,
            r.mean,
            r.stdev,
            f.success,
            f.invalid_json,
            f.context_exceeded,
            f.missing_keys,
            f.backend_unavailable
        ));
    }
    fs::create_dir_all(&config.output_dir).map_err(|e| PipelineError::io(&config.output_dir, e))?;
    write_file(&config.output_dir.join(format!("sweep_{name}.csv")), &csv)?;
    Ok(rows)
}

/// A span proposed by an external extractor, in document character offsets
/// (sentences joined by a newline).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedSpan {
    pub doc_id: String,
    pub begin: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub ttype: TemporalType,
}

/// Copy of `doc` whose annotations are the extracted spans, without values.
fn tagged_copy(doc: &Document, spans: &[&ExtractedSpan]) -> Result<Document, PipelineError> {
    let mut copy = doc.clone();
    copy.realization_labels.clear();
    for s in &mut copy.sentences {
        s.timexes.clear();
    }
    let mut sorted: Vec<&&ExtractedSpan> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.begin, s.end));
    for (i, e) in sorted.into_iter().enumerate() {
        let (idx, local) = doc.locate(Span::new(e.begin, e.end)).ok_or_else(|| {
            PipelineError::Input(format!(
                "span {}..{} is outside the sentences of {}",
                e.begin, e.end, doc.doc_id
            ))
        })?;
        let sentence = &mut copy.sentences[idx];
        let text = sentence
            .slice(local)
            .ok_or_else(|| {
                PipelineError::Input(format!("span {}..{} out of bounds in {}", e.begin, e.end, doc.doc_id))
            })?
            .to_string();
        sentence.timexes.push(Timex {
            tid: format!("p{}", i + 1),
            ttype: e.ttype,
            text,
            span: local,
            value: None,
            attrs: BTreeMap::new(),
        });
    }
    copy.validate()
        .map_err(|e| PipelineError::Input(format!("{}: {e}", doc.doc_id)))?;
    Ok(copy)
}

/// Normalize externally extracted spans and score them against the gold.
pub fn tag_and_normalize(config: &ExperimentConfig, extraction_file: &Path) -> Result<TaggingReport, PipelineError> {
    let extracted: Vec<ExtractedSpan> = read_jsonl(extraction_file)?;
    let ws = Workspace::load(config)?;
    let targets = ws.targets();
    let known: HashSet<&str> = targets.iter().map(|d| d.doc_id.as_str()).collect();
    if let Some(e) = extracted.iter().find(|e| !known.contains(e.doc_id.as_str())) {
        return Err(PipelineError::Input(format!("unknown document {:?}", e.doc_id)));
    }

    let mut gold_spans = Vec::new();
    let mut tagged_docs = Vec::new();
    for d in &targets {
        for (s, t) in d.timexes() {
            let span = d.document_span(s.index, t.span);
            gold_spans.push(TaggedSpan {
                doc_id: d.doc_id.clone(),
                begin: span.begin,
                end: span.end,
                value: t.value.clone(),
            });
        }
        let mine: Vec<&ExtractedSpan> = extracted.iter().filter(|e| e.doc_id == d.doc_id).collect();
        tagged_docs.push(tagged_copy(d, &mine)?);
    }

    // the backend sees gold documents; the prompts only see extracted spans
    let mut backend_cfg = config.backend.clone();
    backend_cfg.run_seed = 1;
    let gold: Vec<Document> = targets.iter().map(|d| (*d).clone()).collect();
    let backend = build_backend(&backend_cfg, &gold)?;
    let ctx = RunContext::new(&ws, backend.as_ref(), 1);
    let results: Vec<DocResult> = tagged_docs
        .par_iter()
        .map(|d| ctx.process(d))
        .collect::<Result<_, _>>()?;

    let mut predicted = Vec::new();
    for (doc, res) in tagged_docs.iter().zip(&results) {
        for (r, (s, t)) in res.records.iter().zip(doc.timexes()) {
            let span = doc.document_span(s.index, t.span);
            predicted.push(TaggedSpan {
                doc_id: doc.doc_id.clone(),
                begin: span.begin,
                end: span.end,
                value: r.predicted_value.clone(),
            });
        }
    }
    let report = extraction_prf(&gold_spans, &predicted)?;
    fs::create_dir_all(&config.output_dir).map_err(|e| PipelineError::io(&config.output_dir, e))?;
    write_file(
        &config.output_dir.join("tagging.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}

/// Result of rebuilding every logged prompt from past predictions only.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayCheck {
    pub prompts: usize,
    pub verified: usize,
    pub mismatches: Vec<String>,
}

impl ReplayCheck {
    pub fn is_clean(&self) -> bool {
        self.mismatches.is_empty() && self.prompts == self.verified
    }
}

/// Rebuild each prompt of run `run` using only the predictions of earlier
/// sentences and compare its digest with the audit log.
pub fn verify_audit(ws: &Workspace, run: usize) -> Result<ReplayCheck, PipelineError> {
    let cfg = &ws.config;
    let records: Vec<PredictionRecord> = read_jsonl(&predictions_path(&cfg.output_dir, run))?;
    let audits: Vec<AuditEntry> = read_jsonl(&audit_path(&cfg.output_dir, run))?;
    let prompt_cfg = PromptConfig {
        max_input_tokens: cfg.backend.max_input_tokens,
    };
    let docs: HashMap<&str, &Document> = ws.targets().into_iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let mut check = ReplayCheck {
        prompts: audits.len(),
        ..Default::default()
    };
    for a in &audits {
        let Some(doc) = docs.get(a.doc_id.as_str()) else {
            check.mismatches.push(format!("{}: unknown document", a.doc_id));
            continue;
        };
        if a.window_indices.iter().any(|&i| i >= a.sentence_index) {
            check
                .mismatches
                .push(format!("{}#{}: window reaches forward", a.doc_id, a.sentence_index));
            continue;
        }
        let mut record = RunningRecord::new(doc.doc_id.clone(), doc.dct);
        let mut by_sentence: BTreeMap<usize, Vec<(String, String)>> = BTreeMap::new();
        for r in records
            .iter()
            .filter(|r| r.doc_id == a.doc_id && r.sentence_index < a.sentence_index)
        {
            if let Some(v) = &r.predicted_value {
                by_sentence
                    .entry(r.sentence_index)
                    .or_default()
                    .push((r.tid.clone(), v.clone()));
            }
        }
        for (idx, preds) in &by_sentence {
            record.update(*idx, preds)?;
        }
        if record.entries.len() != a.record_entries {
            check.mismatches.push(format!(
                "{}#{}: record has {} entries, log says {}",
                a.doc_id,
                a.sentence_index,
                record.entries.len(),
                a.record_entries
            ));
            continue;
        }
        let sentence = &doc.sentences[a.sentence_index];
        let window = ContextWindow::build(doc, a.sentence_index, cfg.effective_window(), &record);
        let examples: Vec<&CandidateExample> = match &ws.index {
            Some(index) => a.selection.selected_ids.iter().filter_map(|id| index.get(id)).collect(),
            None => Vec::new(),
        };
        if examples.len() != a.selection.selected_ids.len() {
            check.mismatches.push(format!(
                "{}#{}: selected example missing from pool",
                a.doc_id, a.sentence_index
            ));
            continue;
        }
        let digest = match build_prompt(cfg.strategy, &examples, sentence, &record, &window, &prompt_cfg) {
            Ok(b) => b.digest(),
            Err(PromptError::ContextExceeded { .. }) => String::new(),
            Err(e) => return Err(e.into()),
        };
        if digest == a.prompt_sha256 && window.values == a.previous_values {
            check.verified += 1;
        } else {
            check
                .mismatches
                .push(format!("{}#{}: rebuilt prompt differs", a.doc_id, a.sentence_index));
        }
    }
    Ok(check)
}
