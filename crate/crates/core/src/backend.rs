//! Chat backends, response parsing and the failure taxonomy.
//!
//! Every backend turns a [`PromptBundle`] into raw text. [`parse_response`]
//! then maps that text to a phrase → value map or a classified
//! [`BackendFailure`]; it never panics or errors.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{LazyLock, Mutex};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::{Document, Span};
use crate::error::PipelineError;
use crate::prompting::{parse_target_block, PromptBundle, TargetTe};
use crate::rules::{normalize, AnchorContext};

pub const DEFAULT_MAX_INPUT_TOKENS: usize = 16_000;
pub const DEFAULT_RETRIES: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    RemoteChat,
    Oracle,
    RuleBased,
    Broken,
    /// Answers from a recorded fixture file; no network.
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BrokenMode {
    /// The oracle answer with its last three characters cut off.
    #[default]
    TruncatedJson,
    /// A refusal with no JSON in it.
    Prose,
    /// Whatever `broken_text` holds.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub temperature: f64,
    pub max_input_tokens: usize,
    pub run_seed: u64,
    pub retries: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
    /// Minimum spacing between any two remote requests in this process.
    pub min_request_interval_ms: u64,
    pub broken_mode: BrokenMode,
    pub broken_text: Option<String>,
    /// Break one in every `broken_every` TE-bearing sentences (by index).
    pub broken_every: usize,
    pub replay_path: Option<PathBuf>,
    /// Append every remote exchange to this file.
    pub record_path: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Oracle,
            endpoint: None,
            model: None,
            api_key_env: None,
            temperature: 0.0,
            max_input_tokens: DEFAULT_MAX_INPUT_TOKENS,
            run_seed: 1,
            retries: DEFAULT_RETRIES,
            backoff_ms: 500,
            timeout_secs: 120,
            min_request_interval_ms: 0,
            broken_mode: BrokenMode::TruncatedJson,
            broken_text: None,
            broken_every: 1,
            replay_path: None,
            record_path: None,
        }
    }
}

impl BackendConfig {
    pub fn oracle() -> Self {
        BackendConfig::default()
    }

    pub fn with_kind(kind: BackendKind) -> Self {
        BackendConfig {
            kind,
            ..Default::default()
        }
    }

    /// Whether two runs with this config must agree byte for byte.
    pub fn is_deterministic(&self) -> bool {
        !matches!(self.kind, BackendKind::RemoteChat)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, Error)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendFailure {
    #[error("response is not a JSON object")]
    InvalidJson { raw: String },
    #[error("prompt needs ~{estimate} tokens, limit is {limit}")]
    ContextExceeded { estimate: usize, limit: usize },
    #[error("response lacks keys {missing:?}")]
    MissingKeys { missing: Vec<String> },
    #[error("backend unavailable: {detail}")]
    BackendUnavailable { detail: String },
}

impl BackendFailure {
    pub fn label(&self) -> &'static str {
        match self {
            BackendFailure::InvalidJson { .. } => "InvalidJson",
            BackendFailure::ContextExceeded { .. } => "ContextExceeded",
            BackendFailure::MissingKeys { .. } => "MissingKeys",
            BackendFailure::BackendUnavailable { .. } => "BackendUnavailable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationOutcome {
    Values(BTreeMap<String, String>),
    Failure(BackendFailure),
}

impl NormalizationOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self, NormalizationOutcome::Values(_))
    }

    pub fn failure(&self) -> Option<&BackendFailure> {
        match self {
            NormalizationOutcome::Failure(f) => Some(f),
            NormalizationOutcome::Values(_) => None,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, bundle: &PromptBundle) -> Result<String, BackendFailure>;
}

/// `{"k": "v", ...}` with keys in the given order.
fn json_object<'a, I: IntoIterator<Item = (&'a str, &'a str)>>(pairs: I) -> String {
    let items: Vec<String> = pairs
        .into_iter()
        .map(|(k, v)| format!("{}: {}", Value::from(k), Value::from(v)))
        .collect();
    format!("{{{}}}", items.join(", "))
}

/// Span, text and gold value of one annotated expression.
type GoldTimex = (Span, String, Option<String>);

/// Answers with the gold values of the target expressions, looked up by
/// sentence and span. A target whose span is not in the gold falls back to
/// a gold expression with the same text, then to any overlapping one.
#[derive(Debug, Clone, Default)]
pub struct OracleBackend {
    gold: HashMap<(String, usize), Vec<GoldTimex>>,
}

impl OracleBackend {
    pub fn new<'a, I: IntoIterator<Item = &'a Document>>(docs: I) -> Self {
        let mut gold: HashMap<(String, usize), Vec<_>> = HashMap::new();
        for doc in docs {
            for (s, t) in doc.timexes() {
                gold.entry((doc.doc_id.clone(), s.index))
                    .or_default()
                    .push((t.span, t.text.clone(), t.value.clone()));
            }
        }
        OracleBackend { gold }
    }

    fn lookup(&self, doc_id: &str, sentence: usize, target: &TargetTe) -> &str {
        let Some(cands) = self.gold.get(&(doc_id.to_string(), sentence)) else {
            return "";
        };
        cands
            .iter()
            .find(|(span, _, _)| *span == target.span)
            .or_else(|| cands.iter().find(|(_, text, _)| *text == target.text))
            .or_else(|| cands.iter().find(|(span, _, _)| span.overlaps(&target.span)))
            .and_then(|(_, _, v)| v.as_deref())
            .unwrap_or("")
    }

    pub fn answer(&self, bundle: &PromptBundle) -> String {
        let mut seen = Vec::new();
        let pairs: Vec<(&str, &str)> = bundle
            .targets
            .iter()
            .filter(|t| {
                let fresh = !seen.contains(&t.text.as_str());
                seen.push(t.text.as_str());
                fresh
            })
            .map(|t| (t.text.as_str(), self.lookup(&bundle.doc_id, bundle.sentence_index, t)))
            .collect();
        json_object(pairs)
    }
}

impl ChatBackend for OracleBackend {
    fn name(&self) -> &str {
        "oracle"
    }

    fn complete(&self, bundle: &PromptBundle) -> Result<String, BackendFailure> {
        Ok(self.answer(bundle))
    }
}

/// Reads the target block back out of the prompt and runs the rule grammar.
/// Unresolvable expressions are answered with an empty string.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBasedBackend;

impl ChatBackend for RuleBasedBackend {
    fn name(&self) -> &str {
        "rule-based"
    }

    fn complete(&self, bundle: &PromptBundle) -> Result<String, BackendFailure> {
        let targets = parse_target_block(bundle.guidelines());
        let values: Vec<(String, String)> = targets
            .iter()
            .map(|t| {
                let anchor = AnchorContext {
                    dct: t.dct,
                    previous_values: t.previous_values.clone(),
                };
                let ttype = t.ttype.unwrap_or(crate::corpus::TemporalType::Date);
                let value = normalize(&t.text, ttype, &anchor).value.unwrap_or_default();
                (t.text.clone(), value)
            })
            .collect();
        let mut seen = Vec::new();
        Ok(json_object(
            values
                .iter()
                .filter(|(k, _)| {
                    let fresh = !seen.contains(k);
                    seen.push(k.clone());
                    fresh
                })
                .map(|(k, v)| (k.as_str(), v.as_str())),
        ))
    }
}

pub const PROSE_REPLY: &str = "I'm sorry, but I can't determine the normalized values for these expressions.";

/// Returns malformed text on one in every `every` sentences and the oracle
/// answer otherwise.
#[derive(Debug, Clone)]
pub struct BrokenBackend {
    pub mode: BrokenMode,
    pub text: String,
    pub every: usize,
    oracle: OracleBackend,
}

impl BrokenBackend {
    pub fn new(mode: BrokenMode, oracle: OracleBackend) -> Self {
        BrokenBackend {
            mode,
            text: PROSE_REPLY.to_string(),
            every: 1,
            oracle,
        }
    }

    pub fn breaks(&self, sentence_index: usize) -> bool {
        self.every > 0 && sentence_index.is_multiple_of(self.every)
    }
}

impl ChatBackend for BrokenBackend {
    fn name(&self) -> &str {
        "broken"
    }

    fn complete(&self, bundle: &PromptBundle) -> Result<String, BackendFailure> {
        let good = self.oracle.answer(bundle);
        if !self.breaks(bundle.sentence_index) {
            return Ok(good);
        }
        Ok(match self.mode {
            BrokenMode::TruncatedJson => {
                let keep = good.chars().count().saturating_sub(3);
                good.chars().take(keep).collect()
            }
            BrokenMode::Prose => PROSE_REPLY.to_string(),
            BrokenMode::Fixed => self.text.clone(),
        })
    }
}

static LAST_REQUEST: LazyLock<Mutex<Option<Instant>>> = LazyLock::new(|| Mutex::new(None));

fn rate_limit(min_interval: Duration) {
    if min_interval.is_zero() {
        return;
    }
    let mut last = LAST_REQUEST.lock().unwrap_or_else(|e| e.into_inner());
    if let Some(t) = *last {
        let elapsed = t.elapsed();
        if elapsed < min_interval {
            std::thread::sleep(min_interval - elapsed);
        }
    }
    *last = Some(Instant::now());
}

#[derive(Debug, Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    temperature: f64,
    seed: u64,
    messages: Vec<WireMessage<'a>>,
}

/// OpenAI-style chat-completion client.
pub struct RemoteChatBackend {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    temperature: f64,
    seed: u64,
    retries: u32,
    backoff: Duration,
    min_interval: Duration,
    http: reqwest::blocking::Client,
}

impl RemoteChatBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, PipelineError> {
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| PipelineError::Config("remote-chat backend needs an endpoint".into()))?;
        let model = config
            .model
            .clone()
            .ok_or_else(|| PipelineError::Config("remote-chat backend needs a model".into()))?;
        let api_key = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| PipelineError::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| PipelineError::Config(format!("http client: {e}")))?;
        Ok(RemoteChatBackend {
            endpoint,
            model,
            api_key,
            temperature: config.temperature,
            seed: config.run_seed,
            retries: config.retries,
            backoff: Duration::from_millis(config.backoff_ms),
            min_interval: Duration::from_millis(config.min_request_interval_ms),
            http,
        })
    }

    /// The JSON body sent for a bundle.
    pub fn request_body(&self, bundle: &PromptBundle) -> Value {
        let req = WireRequest {
            model: &self.model,
            temperature: self.temperature,
            seed: self.seed,
            messages: bundle
                .messages
                .iter()
                .map(|m| WireMessage {
                    role: m.role.chat_role(),
                    content: &m.content,
                })
                .collect(),
        };
        serde_json::to_value(req).expect("request serializes")
    }

    fn attempt(&self, body: &Value) -> Result<String, (bool, String)> {
        rate_limit(self.min_interval);
        let mut req = self.http.post(&self.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let transient = status.is_server_error() || status.as_u16() == 429;
            return Err((transient, format!("HTTP status {status}")));
        }
        let json: Value = resp.json().map_err(|e| (false, format!("bad response body: {e}")))?;
        json.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| (false, "response has no choices[0].message.content".to_string()))
    }
}

impl ChatBackend for RemoteChatBackend {
    fn name(&self) -> &str {
        &self.model
    }

    fn complete(&self, bundle: &PromptBundle) -> Result<String, BackendFailure> {
        let body = self.request_body(bundle);
        let mut delay = self.backoff;
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err((transient, detail)) => {
                    if !transient || attempt >= self.retries {
                        return Err(BackendFailure::BackendUnavailable { detail });
                    }
                    log::warn!("request failed ({detail}), retry {} of {}", attempt + 1, self.retries);
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        }
    }
}

/// One stored exchange, keyed by [`PromptBundle::digest`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedExchange {
    pub digest: String,
    pub doc_id: String,
    pub sentence_index: usize,
    pub response: String,
}

/// Replays responses from a JSONL file of [`RecordedExchange`].
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    responses: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let file = File::open(path).map_err(|e| PipelineError::io(path, e))?;
        let mut responses = HashMap::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| PipelineError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let ex: RecordedExchange = serde_json::from_str(&line)?;
            responses.insert(ex.digest, ex.response);
        }
        Ok(ReplayBackend { responses })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ChatBackend for ReplayBackend {
    fn name(&self) -> &str {
        "replay"
    }

    fn complete(&self, bundle: &PromptBundle) -> Result<String, BackendFailure> {
        self.responses
            .get(&bundle.digest())
            .cloned()
            .ok_or_else(|| BackendFailure::BackendUnavailable {
                detail: format!(
                    "no recorded response for {} sentence {}",
                    bundle.doc_id, bundle.sentence_index
                ),
            })
    }
}

/// Wraps a backend and appends every successful exchange to a file.
pub struct RecordingBackend {
    inner: Box<dyn ChatBackend>,
    out: Mutex<File>,
}

impl RecordingBackend {
    pub fn new(inner: Box<dyn ChatBackend>, path: &Path) -> Result<Self, PipelineError> {
        let out = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| PipelineError::io(path, e))?;
        Ok(RecordingBackend {
            inner,
            out: Mutex::new(out),
        })
    }
}

impl ChatBackend for RecordingBackend {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, bundle: &PromptBundle) -> Result<String, BackendFailure> {
        let response = self.inner.complete(bundle)?;
        let ex = RecordedExchange {
            digest: bundle.digest(),
            doc_id: bundle.doc_id.clone(),
            sentence_index: bundle.sentence_index,
            response: response.clone(),
        };
        let line = serde_json::to_string(&ex).expect("exchange serializes");
        let mut out = self.out.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = writeln!(out, "{line}") {
            log::warn!("could not record exchange: {e}");
        }
        Ok(response)
    }
}

/// Build the backend described by `config`. `gold` feeds the oracle and
/// broken backends.
pub fn build_backend(config: &BackendConfig, gold: &[Document]) -> Result<Box<dyn ChatBackend>, PipelineError> {
    let backend: Box<dyn ChatBackend> = match config.kind {
        BackendKind::Oracle => Box::new(OracleBackend::new(gold)),
        BackendKind::RuleBased => Box::new(RuleBasedBackend),
        BackendKind::Broken => {
            let mut b = BrokenBackend::new(config.broken_mode, OracleBackend::new(gold));
            b.every = config.broken_every;
            if let Some(t) = &config.broken_text {
                b.text = t.clone();
            }
            Box::new(b)
        }
        BackendKind::RemoteChat => Box::new(RemoteChatBackend::new(config)?),
        BackendKind::Replay => {
            let path = config
                .replay_path
                .as_ref()
                .ok_or_else(|| PipelineError::Config("replay backend needs replay_path".into()))?;
            Box::new(ReplayBackend::load(path)?)
        }
    };
    match &config.record_path {
        Some(path) => Ok(Box::new(RecordingBackend::new(backend, path)?)),
        None => Ok(backend),
    }
}

/// Byte range of the first balanced `{...}` in `raw`, honouring both quote
/// styles and backslash escapes.
fn first_object(raw: &str) -> Option<(usize, usize)> {
    let bytes = raw.as_bytes();
    let start = raw.find('{')?;
    let mut depth = 0usize;
    let mut quote: Option<u8> = None;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == q {
                quote = None;
            }
            continue;
        }
        match b {
            b'"' | b'\'' if !is_apostrophe(bytes, i) => quote = Some(b),
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some((start, i + 1));
                }
            }
            _ => {}
        }
    }
    None
}

/// A `'` between two letters outside any string is an apostrophe.
fn is_apostrophe(bytes: &[u8], i: usize) -> bool {
    bytes[i] == b'\''
        && i > 0
        && bytes[i - 1].is_ascii_alphabetic()
        && bytes.get(i + 1).is_some_and(|b| b.is_ascii_alphabetic())
}

static PY_LITERAL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(None|True|False)\b").unwrap());

/// Rewrite a Python-style dict literal into JSON.
fn normalize_quotes(obj: &str) -> String {
    let mut out = String::with_capacity(obj.len());
    let mut chars = obj.chars().peekable();
    let mut plain = String::new();
    let flush = |plain: &mut String, out: &mut String| {
        out.push_str(&PY_LITERAL.replace_all(plain, |c: &regex::Captures| match &c[1] {
            "None" => "null",
            "True" => "true",
            _ => "false",
        }));
        plain.clear();
    };
    while let Some(c) = chars.next() {
        if c != '"' && c != '\'' {
            plain.push(c);
            continue;
        }
        flush(&mut plain, &mut out);
        let mut s = String::new();
        while let Some(d) = chars.next() {
            match d {
                '\\' => match chars.next() {
                    Some('\'') => s.push('\''),
                    Some('"') => s.push('"'),
                    Some('n') => s.push('\n'),
                    Some('t') => s.push('\t'),
                    Some(other) => s.push(other),
                    None => {}
                },
                d if d == c => break,
                d => s.push(d),
            }
        }
        out.push_str(&Value::from(s).to_string());
    }
    flush(&mut plain, &mut out);
    out
}

fn scalar_to_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

/// Map a raw completion to values for `expected_phrases`.
///
/// The first top-level object is extracted from surrounding prose; single
/// quotes are accepted. Keys match exactly, then case-insensitively.
pub fn parse_response(raw: &str, expected_phrases: &[String]) -> NormalizationOutcome {
    let invalid = || NormalizationOutcome::Failure(BackendFailure::InvalidJson { raw: raw.to_string() });
    let Some((a, b)) = first_object(raw) else {
        return invalid();
    };
    let obj = &raw[a..b];
    let parsed = serde_json::from_str::<Value>(obj).or_else(|_| serde_json::from_str::<Value>(&normalize_quotes(obj)));
    let Ok(Value::Object(map)) = parsed else {
        return invalid();
    };

    let mut values = BTreeMap::new();
    let mut missing = Vec::new();
    for phrase in expected_phrases {
        let hit = map.get(phrase).or_else(|| {
            let want = phrase.trim().to_lowercase();
            map.iter()
                .find(|(k, _)| k.trim().to_lowercase() == want)
                .map(|(_, v)| v)
        });
        match hit {
            Some(v) => {
                values.insert(phrase.clone(), scalar_to_string(v));
            }
            None => missing.push(phrase.clone()),
        }
    }
    if !missing.is_empty() {
        return NormalizationOutcome::Failure(BackendFailure::MissingKeys { missing });
    }
    let extra = map.len().saturating_sub(values.len());
    if extra > 0 {
        log::warn!("ignoring {extra} unexpected key(s) in response");
    }
    NormalizationOutcome::Values(values)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureHistogram {
    pub success: usize,
    pub invalid_json: usize,
    pub context_exceeded: usize,
    pub missing_keys: usize,
    pub backend_unavailable: usize,
}

impl FailureHistogram {
    pub fn add(&mut self, outcome: &NormalizationOutcome) {
        match outcome {
            NormalizationOutcome::Values(_) => self.success += 1,
            NormalizationOutcome::Failure(f) => match f {
                BackendFailure::InvalidJson { .. } => self.invalid_json += 1,
                BackendFailure::ContextExceeded { .. } => self.context_exceeded += 1,
                BackendFailure::MissingKeys { .. } => self.missing_keys += 1,
                BackendFailure::BackendUnavailable { .. } => self.backend_unavailable += 1,
            },
        }
    }

    pub fn failures(&self) -> usize {
        self.invalid_json + self.context_exceeded + self.missing_keys + self.backend_unavailable
    }

    pub fn total(&self) -> usize {
        self.success + self.failures()
    }

    pub fn merge(&mut self, other: &FailureHistogram) {
        self.success += other.success;
        self.invalid_json += other.invalid_json;
        self.context_exceeded += other.context_exceeded;
        self.missing_keys += other.missing_keys;
        self.backend_unavailable += other.backend_unavailable;
    }
}

pub fn classify_failures<'a, I>(outcomes: I) -> FailureHistogram
where
    I: IntoIterator<Item = &'a NormalizationOutcome>,
{
    let mut h = FailureHistogram::default();
    for o in outcomes {
        h.add(o);
    }
    h
}
