//! Prompt construction.
//!
//! A prompt bundle is four chat messages: a fixed system instruction, a
//! fixed user question, a fixed assistant acknowledgment, and the
//! guidelines message. The guidelines hold a numbered list of solved
//! examples followed by one unsolved target block:
//!
//! ```text
//! Here are some examples and the expected output format with normalized expressions
//! 1. <example sentence with TIMEX3 tags, no value attribute>
//! List of time expressions to normalize: ['...']
//! Output: {'...': '...'}
//! 2. Sentence: <context window> <target sentence>
//! List of time expressions to normalize: ['...']
//! Output:
//! ```
//!
//! Target tags carry `tid`, `type`, `previous_timex` (predicted values seen
//! inside the context window) and `dct`, never `value`. Context sentences
//! carry the *predicted* values of their expressions.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::markup::{escape_attr, escape_text};
use crate::corpus::timeml::{render_tag, render_with};
use crate::corpus::{parse_fragment, Document, Sentence, Span, TemporalType};
use crate::embedding::CandidateExample;
use crate::error::PromptError;
use crate::selection::SelectionStrategy;

pub const SYSTEM_PROMPT: &str = "Function as a system that gives the normalized time expressions for all TIMEX3 tags of type DATE, TIME, DURATION, and SET. The identified normalized time expression should be according to TIMEML annotation standards. The output shows the normalized values for the time expressions. All time expressions that are required to be normalized is passed as a list.";
pub const USER_PROMPT: &str = "Are you clear about your role?";
pub const ASSISTANT_PROMPT: &str =
    "Sure, I'm ready to help you with your task. Please provide me with the necessary information to get started.";
pub const GUIDELINES_HEADER: &str = "Here are some examples and the expected output format with normalized expressions";
pub const PHRASE_LIST_LABEL: &str = "List of time expressions to normalize: ";
pub const OUTPUT_LABEL: &str = "Output:";
pub const SENTENCE_LABEL: &str = "Sentence: ";

/// Guidelines of the expert-prompt strategy: one hand-written example
/// covering every temporal type, numbered as item 1.
pub const EXPERT_PROMPT: &str = include_str!("../resources/expert_prompt.txt");
pub const EXPERT_PROMPT_VERSION: u32 = 1;

pub const DEFAULT_WINDOW_LENGTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    /// The guidelines message; sent with the `user` chat role.
    GuidelineUser,
}

impl Role {
    pub fn chat_role(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User | Role::GuidelineUser => "user",
            Role::Assistant => "assistant",
        }
    }

    fn label(self) -> &'static str {
        match self {
            Role::System => "SYSTEM PROMPT",
            Role::User => "USER PROMPT",
            Role::Assistant => "ASSISTANT PROMPT",
            Role::GuidelineUser => "GUIDELINES PROMPT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub tid: String,
    pub predicted_value: String,
    pub sentence_index: usize,
}

/// Predicted values of the expressions already processed in a document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunningRecord {
    pub doc_id: String,
    pub dct: NaiveDate,
    pub entries: Vec<RecordEntry>,
}

impl RunningRecord {
    pub fn new(doc_id: impl Into<String>, dct: NaiveDate) -> Self {
        RunningRecord {
            doc_id: doc_id.into(),
            dct,
            entries: Vec::new(),
        }
    }

    pub fn last_sentence(&self) -> Option<usize> {
        self.entries.last().map(|e| e.sentence_index)
    }

    /// Append the predictions of one sentence, given as `(tid, value)` in
    /// document order. An empty list leaves the record untouched.
    pub fn update(&mut self, sentence_index: usize, predictions: &[(String, String)]) -> Result<(), PromptError> {
        if predictions.is_empty() {
            return Ok(());
        }
        if let Some(last) = self.last_sentence() {
            if sentence_index <= last {
                return Err(PromptError::OrderViolation {
                    doc_id: self.doc_id.clone(),
                    last,
                    attempted: sentence_index,
                });
            }
        }
        self.entries.extend(predictions.iter().map(|(tid, value)| RecordEntry {
            tid: tid.clone(),
            predicted_value: value.clone(),
            sentence_index,
        }));
        Ok(())
    }

    pub fn value_of(&self, tid: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.tid == tid)
            .map(|e| e.predicted_value.as_str())
    }
}

/// Functional form of [`RunningRecord::update`].
pub fn update_running_record(
    mut record: RunningRecord,
    sentence_index: usize,
    predictions: &[(String, String)],
) -> Result<RunningRecord, PromptError> {
    record.update(sentence_index, predictions)?;
    Ok(record)
}

/// Distinct values in order, keeping the most recent occurrence of each.
pub fn context_values<'a, I>(values: I) -> Vec<String>
where
    I: IntoIterator<Item = &'a str>,
{
    let all: Vec<&str> = values.into_iter().collect();
    let mut out: Vec<String> = Vec::new();
    for (i, v) in all.iter().enumerate() {
        if !all[i + 1..].contains(v) {
            out.push((*v).to_string());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSentence {
    pub index: usize,
    /// Sentence markup with predicted values substituted.
    pub rendered: String,
}

/// The previous sentences of the target's document shown before it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub length: usize,
    pub sentences: Vec<WindowSentence>,
    /// Distinct predicted values inside the window, most recent last.
    pub values: Vec<String>,
}

impl ContextWindow {
    pub fn empty(length: usize) -> Self {
        ContextWindow {
            length,
            sentences: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Window of up to `length` sentences before `target_index`. Sentences
    /// without expressions still take up a slot; expressions without a
    /// recorded prediction are shown as plain text.
    pub fn build(doc: &Document, target_index: usize, length: usize, record: &RunningRecord) -> Self {
        let from = target_index.saturating_sub(length);
        let mut sentences = Vec::new();
        let mut seen = Vec::new();
        for s in &doc.sentences[from..target_index.min(doc.sentences.len())] {
            let rendered = render_with(s, |t| match record.value_of(&t.tid) {
                Some(v) => {
                    seen.push(v);
                    format!(
                        "<TIMEX3 tid=\"{}\" type=\"{}\" value=\"{}\">{}</TIMEX3>",
                        escape_attr(&t.tid),
                        t.ttype,
                        escape_attr(v),
                        escape_text(&t.text)
                    )
                }
                None => escape_text(&t.text),
            });
            sentences.push(WindowSentence {
                index: s.index,
                rendered,
            });
        }
        ContextWindow {
            length,
            sentences,
            values: context_values(seen),
        }
    }

    pub fn indices(&self) -> Vec<usize> {
        self.sentences.iter().map(|s| s.index).collect()
    }
}

/// Sentence markup with full gold tags, as stored in candidate examples.
pub fn render_annotated(sentence: &Sentence) -> String {
    render_with(sentence, |t| render_tag(t, None))
}

fn target_tag(tid: &str, ttype: TemporalType, previous: &[String], dct: Option<NaiveDate>, text: &str) -> String {
    let mut tag = format!("<TIMEX3 tid=\"{}\" type=\"{}\"", escape_attr(tid), ttype);
    if !previous.is_empty() {
        tag.push_str(&format!(" previous_timex=\"{}\"", escape_attr(&previous.join(" "))));
    }
    if let Some(d) = dct {
        tag.push_str(&format!(" dct=\"{}\"", d.format("%Y-%m-%d")));
    }
    tag.push('>');
    tag.push_str(&escape_text(text));
    tag.push_str("</TIMEX3>");
    tag
}

/// The window sentences followed by the target sentence, whose tags carry
/// `previous_timex` and `dct` in place of `value`.
pub fn render_target_sentence(sentence: &Sentence, record: &RunningRecord, window: &ContextWindow) -> String {
    let target = render_with(sentence, |t| {
        target_tag(&t.tid, t.ttype, &window.values, Some(record.dct), &t.text)
    });
    let mut parts: Vec<&str> = window.sentences.iter().map(|s| s.rendered.as_str()).collect();
    parts.push(&target);
    parts.join(" ")
}

/// Python-style string literal, the quoting used in phrase lists and outputs.
pub fn py_str(s: &str) -> String {
    let quote = if s.contains('\'') && !s.contains('"') {
        '"'
    } else {
        '\''
    };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(quote);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c if c == quote => {
                out.push('\\');
                out.push(c);
            }
            c => out.push(c),
        }
    }
    out.push(quote);
    out
}

/// `['a', 'b']` over distinct phrases in order.
pub fn phrase_list<'a, I>(phrases: I) -> String
where
    I: IntoIterator<Item = &'a str>,
{
    let items: Vec<String> = distinct(phrases).into_iter().map(py_str).collect();
    format!("[{}]", items.join(", "))
}

/// `{'phrase': 'value', ...}`; the first occurrence of a phrase wins.
pub fn output_map<'a, I>(pairs: I) -> String
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut seen: Vec<&str> = Vec::new();
    let mut items = Vec::new();
    for (k, v) in pairs {
        if !seen.contains(&k) {
            seen.push(k);
            items.push(format!("{}: {}", py_str(k), py_str(v)));
        }
    }
    format!("{{{}}}", items.join(", "))
}

fn distinct<'a, I: IntoIterator<Item = &'a str>>(phrases: I) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for p in phrases {
        if !out.contains(&p) {
            out.push(p);
        }
    }
    out
}

/// One solved example block (without its list number).
pub fn render_example(example: &CandidateExample) -> String {
    let fragment = match parse_fragment(&example.text) {
        Ok(f) => f,
        Err(e) => {
            log::warn!("example {} has malformed markup: {e}", example.id);
            return example.text.clone();
        }
    };
    let chars: Vec<char> = fragment.text.chars().collect();
    let mut sentence = String::new();
    let mut at = 0;
    for t in &fragment.timexes {
        sentence.push_str(&escape_text(&chars[at..t.span.begin].iter().collect::<String>()));
        let ttype = t
            .attr("type")
            .and_then(|s| s.parse().ok())
            .unwrap_or(TemporalType::Date);
        sentence.push_str(&target_tag(
            t.attr("tid").unwrap_or(""),
            ttype,
            &example.previous_values,
            example.dct,
            &t.text,
        ));
        at = t.span.end;
    }
    sentence.push_str(&escape_text(&chars[at..].iter().collect::<String>()));

    let phrases = fragment.timexes.iter().map(|t| t.text.as_str());
    let gold = fragment
        .timexes
        .iter()
        .map(|t| (t.text.as_str(), t.attr("value").unwrap_or("")));
    format!(
        "{sentence}\n{PHRASE_LIST_LABEL}{}\nOutput: {}",
        phrase_list(phrases),
        output_map(gold)
    )
}

/// The unsolved block for a rendered target sentence.
pub fn target_block<'a, I>(rendered_target: &str, phrases: I) -> String
where
    I: IntoIterator<Item = &'a str>,
{
    format!(
        "{SENTENCE_LABEL}{rendered_target}\n{PHRASE_LIST_LABEL}{}\n{OUTPUT_LABEL}",
        phrase_list(phrases)
    )
}

/// Numbered example list followed by the target block. Without examples
/// the header is dropped and only the target block remains.
pub fn render_guidelines(examples: &[&CandidateExample], target_block: &str) -> String {
    if examples.is_empty() {
        return format!("1. {target_block}");
    }
    let mut out = String::from(GUIDELINES_HEADER);
    for (i, ex) in examples.iter().enumerate() {
        out.push_str(&format!("\n{}. {}", i + 1, render_example(ex)));
    }
    out.push_str(&format!("\n{}. {target_block}", examples.len() + 1));
    out
}

/// Guidelines for the expert-prompt strategy.
pub fn render_expert_guidelines(target_block: &str) -> String {
    format!("{EXPERT_PROMPT}2. {target_block}")
}

/// An expression the backend is asked to normalize.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetTe {
    pub tid: String,
    pub ttype: TemporalType,
    pub text: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub doc_id: String,
    pub sentence_index: usize,
    pub messages: Vec<Message>,
    pub targets: Vec<TargetTe>,
    pub token_estimate: usize,
}

impl PromptBundle {
    pub fn target_tids(&self) -> Vec<&str> {
        self.targets.iter().map(|t| t.tid.as_str()).collect()
    }

    /// Distinct target surface strings in order; the keys of the answer.
    pub fn expected_phrases(&self) -> Vec<String> {
        distinct(self.targets.iter().map(|t| t.text.as_str()))
            .into_iter()
            .map(str::to_string)
            .collect()
    }

    pub fn guidelines(&self) -> &str {
        self.messages
            .iter()
            .find(|m| m.role == Role::GuidelineUser)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    /// Human-readable form used by golden files.
    pub fn transcript(&self) -> String {
        let sections: Vec<String> = self
            .messages
            .iter()
            .map(|m| format!("{}: {}", m.role.label(), m.content))
            .collect();
        sections.join("\n\n") + "\n"
    }

    /// Hex SHA-256 over roles and contents, for audit logs.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for m in &self.messages {
            h.update(m.role.chat_role().as_bytes());
            h.update([0u8]);
            h.update(m.content.as_bytes());
            h.update([0u8]);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Rough token count: characters / 4, rounded up.
pub fn estimate_tokens(messages: &[Message]) -> usize {
    let chars: usize = messages.iter().map(|m| m.content.chars().count()).sum();
    chars.div_ceil(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub max_input_tokens: usize,
}

/// Assemble the four-message bundle for one target sentence.
pub fn build_prompt(
    strategy: SelectionStrategy,
    examples: &[&CandidateExample],
    sentence: &Sentence,
    record: &RunningRecord,
    window: &ContextWindow,
    config: &PromptConfig,
) -> Result<PromptBundle, PromptError> {
    if !sentence.has_timexes() {
        return Err(PromptError::NoTargets(sentence.index));
    }
    let rendered = render_target_sentence(sentence, record, window);
    let block = target_block(&rendered, sentence.timexes.iter().map(|t| t.text.as_str()));
    let guidelines = match strategy {
        SelectionStrategy::ExpertPrompt => render_expert_guidelines(&block),
        _ => render_guidelines(examples, &block),
    };
    let messages = vec![
        Message {
            role: Role::System,
            content: SYSTEM_PROMPT.to_string(),
        },
        Message {
            role: Role::User,
            content: USER_PROMPT.to_string(),
        },
        Message {
            role: Role::Assistant,
            content: ASSISTANT_PROMPT.to_string(),
        },
        Message {
            role: Role::GuidelineUser,
            content: guidelines,
        },
    ];
    let token_estimate = estimate_tokens(&messages);
    if token_estimate > config.max_input_tokens {
        return Err(PromptError::ContextExceeded {
            estimate: token_estimate,
            limit: config.max_input_tokens,
        });
    }
    Ok(PromptBundle {
        doc_id: record.doc_id.clone(),
        sentence_index: sentence.index,
        messages,
        targets: sentence
            .timexes
            .iter()
            .map(|t| TargetTe {
                tid: t.tid.clone(),
                ttype: t.ttype,
                text: t.text.clone(),
                span: t.span,
            })
            .collect(),
        token_estimate,
    })
}

/// What a backend can read back from the target block of a prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTarget {
    pub tid: String,
    pub ttype: Option<TemporalType>,
    pub text: String,
    pub previous_values: Vec<String>,
    pub dct: Option<NaiveDate>,
}

/// Recover the unsolved target expressions from a guidelines message.
pub fn parse_target_block(guidelines: &str) -> Vec<ParsedTarget> {
    let Some(start) = guidelines.rfind(SENTENCE_LABEL) else {
        return Vec::new();
    };
    let body = &guidelines[start + SENTENCE_LABEL.len()..];
    let end = body.find(&format!("\n{PHRASE_LIST_LABEL}")).unwrap_or(body.len());
    let Ok(fragment) = parse_fragment(&body[..end]) else {
        return Vec::new();
    };
    fragment
        .timexes
        .iter()
        .filter(|t| t.attr("value").is_none())
        .map(|t| ParsedTarget {
            tid: t.attr("tid").unwrap_or("").to_string(),
            ttype: t.attr("type").and_then(|s| s.parse().ok()),
            text: t.text.clone(),
            previous_values: t
                .attr("previous_timex")
                .map(|p| p.split_whitespace().map(str::to_string).collect())
                .unwrap_or_default(),
            dct: t
                .attr("dct")
                .and_then(|d| NaiveDate::parse_from_str(d, "%Y-%m-%d").ok()),
        })
        .collect()
}

/// Map of tid → predicted value for a whole record, handy for replay.
pub fn record_map(record: &RunningRecord) -> BTreeMap<String, String> {
    record
        .entries
        .iter()
        .map(|e| (e.tid.clone(), e.predicted_value.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_timeml;

    fn doc() -> Document {
        parse_timeml(
            "DCT: 1993-07-09\nClamped on <TIMEX3 tid=\"t10\" type=\"DATE\" value=\"1993-07-13\">postoperative day four</TIMEX3>. \
             Continued until <TIMEX3 tid=\"t11\" type=\"DATE\" value=\"1993-07-15\">postoperative day six</TIMEX3>. \
             She takes it for <TIMEX3 tid=\"t13\" type=\"DURATION\" value=\"P9D\">nine more days</TIMEX3>.",
            "d",
        )
        .unwrap()
    }

    fn preds(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn record_appends_in_order() {
        let d = doc();
        let mut r = RunningRecord::new("d", d.dct);
        r.update(0, &preds(&[("t10", "1993-07-13")])).unwrap();
        assert_eq!(r.entries.len(), 1);
        r.update(1, &preds(&[("t11", "1993-07-15")])).unwrap();
        assert_eq!(r.entries[1].sentence_index, 1);
        let before = r.clone();
        r.update(2, &[]).unwrap();
        assert_eq!(r, before);
        assert!(matches!(
            r.update(1, &preds(&[("t99", "2000")])),
            Err(PromptError::OrderViolation {
                last: 1,
                attempted: 1,
                ..
            })
        ));
    }

    #[test]
    fn first_sentence_has_dct_only() {
        let d = doc();
        let r = RunningRecord::new("d", d.dct);
        let w = ContextWindow::build(&d, 0, 3, &r);
        let out = render_target_sentence(&d.sentences[0], &r, &w);
        assert_eq!(
            out,
            "Clamped on <TIMEX3 tid=\"t10\" type=\"DATE\" dct=\"1993-07-09\">postoperative day four</TIMEX3>."
        );
    }

    #[test]
    fn window_zero_equals_no_window() {
        let d = doc();
        let mut r = RunningRecord::new("d", d.dct);
        r.update(0, &preds(&[("t10", "1993-07-13")])).unwrap();
        let zero = ContextWindow::build(&d, 2, 0, &r);
        assert_eq!(
            render_target_sentence(&d.sentences[2], &r, &zero),
            render_target_sentence(&d.sentences[2], &r, &ContextWindow::empty(0))
        );
    }

    #[test]
    fn previous_timex_dedups_keeping_latest() {
        assert_eq!(context_values(["a", "b", "b"]), vec!["a", "b"]);
        assert_eq!(context_values(["a", "b", "a"]), vec!["b", "a"]);
    }

    #[test]
    fn failed_sentences_show_plain_text_in_window() {
        let d = doc();
        let mut r = RunningRecord::new("d", d.dct);
        r.update(1, &preds(&[("t11", "1993-07-15")])).unwrap();
        let w = ContextWindow::build(&d, 2, 3, &r);
        assert_eq!(w.sentences[0].rendered, "Clamped on postoperative day four.");
        assert_eq!(w.values, vec!["1993-07-15"]);
    }

    #[test]
    fn python_quoting() {
        assert_eq!(py_str("10 more days"), "'10 more days'");
        assert_eq!(py_str("the year's end"), "\"the year's end\"");
        assert_eq!(py_str("a'b\"c"), "'a\\'b\"c'");
    }

    #[test]
    fn phrase_list_in_document_order() {
        let d = parse_timeml(
            "DCT: 2020-01-01\nFrom <TIMEX3 tid=\"t1\" type=\"DATE\" value=\"2019\">last year</TIMEX3> until <TIMEX3 tid=\"t2\" type=\"DATE\" value=\"2020-01-01\">today</TIMEX3>.",
            "d",
        )
        .unwrap();
        let s = &d.sentences[0];
        let mut sorted = s.timexes.clone();
        sorted.sort_by_key(|t| t.span.begin);
        let expected = format!("['{}', '{}']", sorted[0].text, sorted[1].text);
        assert_eq!(phrase_list(s.phrases()), expected);
    }

    #[test]
    fn zero_shot_guidelines_hold_only_the_target() {
        let g = render_guidelines(
            &[],
            "Sentence: x\nList of time expressions to normalize: ['x']\nOutput:",
        );
        assert!(g.starts_with("1. Sentence: "));
        assert!(!g.contains(GUIDELINES_HEADER));
        assert!(g.ends_with("Output:"));
    }

    #[test]
    fn target_block_round_trips_through_parser() {
        let d = doc();
        let mut r = RunningRecord::new("d", d.dct);
        r.update(0, &preds(&[("t10", "1993-07-13")])).unwrap();
        r.update(1, &preds(&[("t11", "1993-07-15")])).unwrap();
        let w = ContextWindow::build(&d, 2, 3, &r);
        let bundle = build_prompt(
            SelectionStrategy::TargetCentricContextWindow,
            &[],
            &d.sentences[2],
            &r,
            &w,
            &PromptConfig {
                max_input_tokens: 10_000,
            },
        )
        .unwrap();
        let parsed = parse_target_block(bundle.guidelines());
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].text, "nine more days");
        assert_eq!(parsed[0].previous_values, vec!["1993-07-13", "1993-07-15"]);
        assert_eq!(parsed[0].dct, Some(d.dct));
        assert_eq!(bundle.token_estimate, estimate_tokens(&bundle.messages));
    }

    #[test]
    fn context_limit_is_enforced() {
        let d = doc();
        let r = RunningRecord::new("d", d.dct);
        let err = build_prompt(
            SelectionStrategy::ExpertPrompt,
            &[],
            &d.sentences[0],
            &r,
            &ContextWindow::empty(0),
            &PromptConfig { max_input_tokens: 100 },
        )
        .unwrap_err();
        assert!(matches!(err, PromptError::ContextExceeded { limit: 100, .. }));
    }
}
