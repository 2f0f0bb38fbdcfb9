//! Corpus data model for TIMEX3-annotated documents.
//!
//! Documents are read from UTF-8 files with inline `<TIMEX3>` tags. Every
//! span is expressed in *character* offsets (Unicode scalar values) into the
//! tag-stripped text of its sentence, so `sentence.slice(t.span) == t.text`
//! holds for every annotation regardless of script.

mod manifest;
pub(crate) mod markup;
mod split;
pub(crate) mod timeml;
mod value;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use manifest::{load_manifest, ManifestEntry};
pub use markup::{parse_fragment, Fragment, FragmentTimex};
pub use split::split_sentences;
pub use timeml::{parse_timeml, parse_timeml_with, ParseOptions};
pub use value::{is_date_value, validate_value};

use crate::error::CorpusError;

/// The four TIMEX3 temporal types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TemporalType {
    Date,
    Time,
    Duration,
    Set,
}

impl TemporalType {
    pub const ALL: [TemporalType; 4] = [Self::Date, Self::Time, Self::Duration, Self::Set];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Date => "DATE",
            Self::Time => "TIME",
            Self::Duration => "DURATION",
            Self::Set => "SET",
        }
    }
}

impl fmt::Display for TemporalType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemporalType {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "DATE" => Ok(Self::Date),
            "TIME" => Ok(Self::Time),
            "DURATION" => Ok(Self::Duration),
            "SET" => Ok(Self::Set),
            other => Err(CorpusError::UnknownType(other.to_string())),
        }
    }
}

/// How a temporal expression conveys its time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RealizationClass {
    Explicit,
    Implicit,
    Relative,
    UnderSpecified,
    Vague,
}

impl RealizationClass {
    pub const ALL: [RealizationClass; 5] = [
        Self::Explicit,
        Self::Implicit,
        Self::Relative,
        Self::UnderSpecified,
        Self::Vague,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Explicit => "Explicit",
            Self::Implicit => "Implicit",
            Self::Relative => "Relative",
            Self::UnderSpecified => "UnderSpecified",
            Self::Vague => "Vague",
        }
    }
}

impl fmt::Display for RealizationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RealizationClass {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RealizationClass::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| CorpusError::Invalid(format!("unknown realization class {s:?}")))
    }
}

/// Half-open character range `[begin, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub begin: usize,
    pub end: usize,
}

impl Span {
    pub fn new(begin: usize, end: usize) -> Self {
        Span { begin, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.begin)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.begin
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.begin < other.end && other.begin < self.end
    }

    pub fn shift(&self, by: usize) -> Span {
        Span::new(self.begin + by, self.end + by)
    }
}

/// One annotated temporal expression.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timex {
    pub tid: String,
    pub ttype: TemporalType,
    pub text: String,
    pub span: Span,
    pub value: Option<String>,
    /// Attributes other than `tid`, `type`, `value`, kept for lossless output.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attrs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
    pub timexes: Vec<Timex>,
}

impl Sentence {
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    /// Slice the sentence text by a character span.
    pub fn slice(&self, span: Span) -> Option<&str> {
        char_slice(&self.text, span)
    }

    pub fn has_timexes(&self) -> bool {
        !self.timexes.is_empty()
    }

    /// Surface strings of the annotations, in document order.
    pub fn phrases(&self) -> Vec<&str> {
        self.timexes.iter().map(|t| t.text.as_str()).collect()
    }

    fn validate(&self, doc_id: &str) -> Result<(), CorpusError> {
        let len = self.char_len();
        let mut prev: Option<&Timex> = None;
        for t in &self.timexes {
            if t.span.is_empty() || t.span.end > len {
                return Err(CorpusError::Invalid(format!(
                    "{doc_id}: span {:?} of {} outside sentence {}",
                    t.span, t.tid, self.index
                )));
            }
            if self.slice(t.span) != Some(t.text.as_str()) {
                return Err(CorpusError::Invalid(format!(
                    "{doc_id}: text of {} does not match its span",
                    t.tid
                )));
            }
            if let Some(p) = prev {
                if p.span.begin > t.span.begin {
                    return Err(CorpusError::Invalid(format!(
                        "{doc_id}: timexes of sentence {} not sorted",
                        self.index
                    )));
                }
                if p.span.overlaps(&t.span) {
                    return Err(CorpusError::Invalid(format!("{doc_id}: {} overlaps {}", p.tid, t.tid)));
                }
            }
            prev = Some(t);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub dct: NaiveDate,
    pub language: String,
    pub sentences: Vec<Sentence>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub realization_labels: BTreeMap<String, RealizationClass>,
}

/// Separator placed between sentences in [`Document::plain_text`].
pub const SENTENCE_SEPARATOR: char = '\n';

impl Document {
    /// Check all structural invariants of a document.
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.doc_id.is_empty() {
            return Err(CorpusError::Invalid("empty doc_id".into()));
        }
        let mut tids = HashSet::new();
        for (i, s) in self.sentences.iter().enumerate() {
            if s.index != i {
                return Err(CorpusError::Invalid(format!(
                    "{}: sentence {} carries index {}",
                    self.doc_id, i, s.index
                )));
            }
            s.validate(&self.doc_id)?;
            for t in &s.timexes {
                if !tids.insert(t.tid.as_str()) {
                    return Err(CorpusError::DuplicateTid {
                        doc_id: self.doc_id.clone(),
                        tid: t.tid.clone(),
                    });
                }
            }
        }
        for tid in self.realization_labels.keys() {
            if !tids.contains(tid.as_str()) {
                return Err(CorpusError::Invalid(format!(
                    "{}: realization label for unknown tid {tid}",
                    self.doc_id
                )));
            }
        }
        Ok(())
    }

    pub fn timexes(&self) -> impl Iterator<Item = (&Sentence, &Timex)> {
        self.sentences
            .iter()
            .flat_map(|s| s.timexes.iter().map(move |t| (s, t)))
    }

    pub fn timex(&self, tid: &str) -> Option<&Timex> {
        self.timexes().map(|(_, t)| t).find(|t| t.tid == tid)
    }

    pub fn timex_count(&self) -> usize {
        self.sentences.iter().map(|s| s.timexes.len()).sum()
    }

    /// Sentences joined by [`SENTENCE_SEPARATOR`], the frame for
    /// document-level character offsets.
    pub fn plain_text(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.sentences.iter().enumerate() {
            if i > 0 {
                out.push(SENTENCE_SEPARATOR);
            }
            out.push_str(&s.text);
        }
        out
    }

    /// Character offset at which each sentence starts in [`Self::plain_text`].
    pub fn sentence_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.sentences.len());
        let mut at = 0;
        for s in &self.sentences {
            offsets.push(at);
            at += s.char_len() + 1;
        }
        offsets
    }

    /// Document-level span of an annotation.
    pub fn document_span(&self, sentence_index: usize, span: Span) -> Span {
        span.shift(self.sentence_offsets()[sentence_index])
    }

    /// Locate a document-level span inside a single sentence.
    pub fn locate(&self, span: Span) -> Option<(usize, Span)> {
        let offsets = self.sentence_offsets();
        self.sentences.iter().zip(offsets).find_map(|(s, off)| {
            let end = off + s.char_len();
            (span.begin >= off && span.end <= end && !span.is_empty())
                .then(|| (s.index, Span::new(span.begin - off, span.end - off)))
        })
    }

    /// Serialize back to inline markup: a `DCT:` header line, then one
    /// paragraph per sentence.
    pub fn to_timeml(&self) -> String {
        timeml::serialize(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(CorpusError::Invalid(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub split: Split,
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, split: Split, documents: Vec<Document>) -> Result<Self, CorpusError> {
        let corpus = Corpus {
            name: name.into(),
            split,
            documents,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut seen = HashSet::new();
        for d in &self.documents {
            if !seen.insert(d.doc_id.as_str()) {
                return Err(CorpusError::DuplicateDocument(d.doc_id.clone()));
            }
            d.validate()?;
        }
        Ok(())
    }

    pub fn timex_count(&self) -> usize {
        self.documents.iter().map(Document::timex_count).sum()
    }
}

pub(crate) fn char_slice(text: &str, span: Span) -> Option<&str> {
    if span.begin > span.end {
        return None;
    }
    let mut indices = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
    let start = indices.nth(span.begin)?;
    let end = if span.end == span.begin {
        start
    } else {
        indices.nth(span.end - span.begin - 1)?
    };
    Some(&text[start..end])
}
