//! Tokenizer for text with inline `<TIMEX3>` elements.
//!
//! Other elements are stripped (their text content is kept), the five XML
//! entities and numeric character references are decoded, and self-closing
//! `<TIMEX3 .../>` elements are dropped since they cover no text.

use crate::error::CorpusError;

use super::Span;

/// One `<TIMEX3>` element found in a fragment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FragmentTimex {
    /// Attributes in source order, values entity-decoded.
    pub attrs: Vec<(String, String)>,
    pub text: String,
    /// Character span in [`Fragment::text`].
    pub span: Span,
    pub line: usize,
    pub column: usize,
}

impl FragmentTimex {
    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }
}

/// Tag-stripped text plus the TIMEX3 elements it contained.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Fragment {
    pub text: String,
    pub timexes: Vec<FragmentTimex>,
}

/// Attributes, char start, byte start in the output text and source offset
/// of a TIMEX3 element whose end tag has not been seen yet.
type OpenTag = (Vec<(String, String)>, usize, usize, usize);

/// Tokenize inline markup. Errors carry 1-based line/column positions
/// relative to `raw`.
pub fn parse_fragment(raw: &str) -> Result<Fragment, CorpusError> {
    parse_fragment_at(raw, raw, 0)
}

/// Same as [`parse_fragment`] but reports positions relative to `whole`,
/// where `raw` starts at byte `origin`.
pub(crate) fn parse_fragment_at(raw: &str, whole: &str, origin: usize) -> Result<Fragment, CorpusError> {
    let err = |offset: usize, message: String| {
        let (line, column) = line_col(whole, origin + offset);
        CorpusError::Parse { line, column, message }
    };

    let mut text = String::with_capacity(raw.len());
    let mut chars = 0usize;
    let mut timexes = Vec::new();
    let mut open: Option<OpenTag> = None;

    let bytes = raw.as_bytes();
    let mut i = 0;
    while i < raw.len() {
        let c = raw[i..].chars().next().unwrap();
        if c == '<' && looks_like_tag(&bytes[i + 1..]) {
            if raw[i..].starts_with("<!--") {
                let end = raw[i..]
                    .find("-->")
                    .ok_or_else(|| err(i, "unterminated comment".into()))?;
                i += end + 3;
                continue;
            }
            let close = raw[i..].find('>').ok_or_else(|| err(i, "unterminated tag".into()))?;
            let inner = &raw[i + 1..i + close];
            if let Some(name) = inner.strip_prefix('/') {
                if name.trim().eq_ignore_ascii_case("TIMEX3") {
                    let (attrs, start, byte_start, at) = open
                        .take()
                        .ok_or_else(|| err(i, "closing </TIMEX3> without an open element".into()))?;
                    let inner_text = text[byte_start..].to_string();
                    if inner_text.trim().is_empty() {
                        return Err(err(at, "empty TIMEX3 element".into()));
                    }
                    let (line, column) = line_col(whole, origin + at);
                    timexes.push(FragmentTimex {
                        attrs,
                        text: inner_text,
                        span: Span::new(start, chars),
                        line,
                        column,
                    });
                }
            } else if !inner.starts_with('?') && !inner.starts_with('!') {
                let self_closing = inner.ends_with('/');
                let body = inner.trim_end_matches('/');
                let name_end = body.find(|ch: char| ch.is_whitespace()).unwrap_or(body.len());
                let name = &body[..name_end];
                if name.eq_ignore_ascii_case("TIMEX3") && !self_closing {
                    if open.is_some() {
                        return Err(err(i, "nested or overlapping TIMEX3 element".into()));
                    }
                    let attrs =
                        parse_attrs(&body[name_end..]).map_err(|(off, msg)| err(i + 1 + name_end + off, msg))?;
                    open = Some((attrs, chars, text.len(), i));
                }
            }
            i += close + 1;
            continue;
        }
        if c == '&' {
            if let Some((decoded, used)) = decode_entity(&raw[i..]) {
                text.push(decoded);
                chars += 1;
                i += used;
                continue;
            }
        }
        text.push(c);
        chars += 1;
        i += c.len_utf8();
    }
    if let Some((_, _, _, at)) = open {
        return Err(err(at, "unclosed TIMEX3 element".into()));
    }
    Ok(Fragment { text, timexes })
}

fn looks_like_tag(rest: &[u8]) -> bool {
    matches!(rest.first(), Some(b) if b.is_ascii_alphabetic() || *b == b'/' || *b == b'!' || *b == b'?')
}

fn parse_attrs(src: &str) -> Result<Vec<(String, String)>, (usize, String)> {
    let mut attrs = Vec::new();
    let mut rest = src;
    loop {
        let trimmed = rest.trim_start();
        if trimmed.is_empty() {
            return Ok(attrs);
        }
        let at = src.len() - trimmed.len();
        let eq = trimmed
            .find('=')
            .ok_or_else(|| (at, format!("attribute without value near {:?}", short(trimmed))))?;
        let name = trimmed[..eq].trim();
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err((at, format!("malformed attribute near {:?}", short(trimmed))));
        }
        let after = trimmed[eq + 1..].trim_start();
        let quote = after
            .chars()
            .next()
            .filter(|q| *q == '"' || *q == '\'')
            .ok_or_else(|| (at, format!("unquoted value for attribute {name}")))?;
        let end = after[1..]
            .find(quote)
            .ok_or_else(|| (at, format!("unterminated value for attribute {name}")))?;
        let value = decode_entities(&after[1..1 + end]);
        if attrs.iter().any(|(k, _): &(String, String)| k == name) {
            return Err((at, format!("duplicate attribute {name}")));
        }
        attrs.push((name.to_string(), value));
        rest = &after[end + 2..];
    }
}

fn short(s: &str) -> String {
    s.chars().take(20).collect()
}

fn decode_entity(s: &str) -> Option<(char, usize)> {
    let semi = s[..s.len().min(12)].find(';')?;
    let name = &s[1..semi];
    let c = match name {
        "amp" => '&',
        "lt" => '<',
        "gt" => '>',
        "quot" => '"',
        "apos" => '\'',
        _ => {
            let num = name.strip_prefix('#')?;
            let code = match num.strip_prefix(['x', 'X']) {
                Some(hex) => u32::from_str_radix(hex, 16).ok()?,
                None => num.parse().ok()?,
            };
            char::from_u32(code)?
        }
    };
    Some((c, semi + 1))
}

fn decode_entities(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    while i < s.len() {
        if s.as_bytes()[i] == b'&' {
            if let Some((c, used)) = decode_entity(&s[i..]) {
                out.push(c);
                i += used;
                continue;
            }
        }
        let c = s[i..].chars().next().unwrap();
        out.push(c);
        i += c.len_utf8();
    }
    out
}

pub(crate) fn escape_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            _ => out.push(c),
        }
    }
    out
}

pub(crate) fn escape_attr(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

/// 1-based line and column (in characters) of a byte offset.
pub(crate) fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let line_start = before.rfind('\n').map_or(0, |p| p + 1);
    (line, before[line_start..].chars().count() + 1)
}
