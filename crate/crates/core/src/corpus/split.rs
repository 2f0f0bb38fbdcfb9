//! Rule-based sentence splitting over inline markup.
//!
//! A boundary is placed after `.`, `!` or `?` (plus any closing quotes or
//! brackets) when whitespace follows and the next visible character is
//! uppercase, and at every blank line. No boundary is ever placed inside a
//! `<TIMEX3>` element, and a short list of abbreviations suppresses splits.

use std::ops::Range;

const ABBREVIATIONS: &[&str] = &[
    "Mr", "Mrs", "Ms", "Dr", "Prof", "St", "Jr", "Sr", "vs", "etc", "Inc", "Ltd", "Co", "Corp", "Gen", "Sen", "Rep",
    "Gov", "No", "Nos", "Art", "Mt", "Fig", "e.g", "i.e", "cf", "approx",
];

const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201d}', '\u{2019}', '\u{bb}'];
const OPENERS: &[char] = &['"', '\'', '(', '[', '\u{201c}', '\u{2018}', '\u{ab}'];

/// Split annotated text into sentences. Each output is trimmed; joining the
/// outputs with the removed whitespace reproduces the input.
pub fn split_sentences(raw_text: &str) -> Vec<String> {
    sentence_ranges(raw_text)
        .into_iter()
        .map(|r| raw_text[r].to_string())
        .collect()
}

/// Byte ranges of the trimmed sentences in `raw`.
pub(crate) fn sentence_ranges(raw: &str) -> Vec<Range<usize>> {
    let mut ranges = Vec::new();
    let mut start = 0;
    let mut in_timex = false;
    let mut i = 0;

    while i < raw.len() {
        let c = raw[i..].chars().next().unwrap();
        if c == '<' {
            if let Some((len, timex_state)) = tag_at(&raw[i..]) {
                if let Some(state) = timex_state {
                    in_timex = state;
                }
                i += len;
                continue;
            }
        }
        if in_timex {
            i += c.len_utf8();
            continue;
        }
        if matches!(c, '.' | '!' | '?') {
            let mut end = i + 1;
            while let Some(n) = raw[end..].chars().next() {
                if matches!(n, '.' | '!' | '?') || CLOSERS.contains(&n) {
                    end += n.len_utf8();
                } else if raw[end..].starts_with("</") {
                    match tag_at(&raw[end..]) {
                        Some((len, _)) => end += len,
                        None => break,
                    }
                } else {
                    break;
                }
            }
            let ws_end = skip_whitespace(raw, end);
            if ws_end > end
                && ws_end < raw.len()
                && starts_uppercase(&raw[ws_end..])
                && !(c == '.' && ends_with_abbreviation(&raw[start..i]))
            {
                push_trimmed(raw, start..end, &mut ranges);
                start = ws_end;
                i = ws_end;
                continue;
            }
            i = end;
            continue;
        }
        if c == '\n' {
            let ws_end = skip_whitespace(raw, i);
            if raw[i..ws_end].matches('\n').count() >= 2 {
                push_trimmed(raw, start..i, &mut ranges);
                start = ws_end;
                i = ws_end;
                continue;
            }
        }
        i += c.len_utf8();
    }
    push_trimmed(raw, start..raw.len(), &mut ranges);
    ranges
}

/// Length of a tag starting at `s`, and the TIMEX3 open/closed state it sets.
fn tag_at(s: &str) -> Option<(usize, Option<bool>)> {
    let next = s.as_bytes().get(1)?;
    if !(next.is_ascii_alphabetic() || *next == b'/' || *next == b'!' || *next == b'?') {
        return None;
    }
    let close = s.find('>')?;
    let inner = &s[1..close];
    let state = if let Some(name) = inner.strip_prefix('/') {
        name.trim().eq_ignore_ascii_case("TIMEX3").then_some(false)
    } else {
        let name = inner
            .split(|c: char| c.is_whitespace() || c == '/')
            .next()
            .unwrap_or("");
        (name.eq_ignore_ascii_case("TIMEX3") && !inner.ends_with('/')).then_some(true)
    };
    Some((close + 1, state))
}

fn skip_whitespace(s: &str, mut i: usize) -> usize {
    while let Some(c) = s[i..].chars().next() {
        if !c.is_whitespace() {
            break;
        }
        i += c.len_utf8();
    }
    i
}

/// First visible character after any opening tags and opening quotes.
fn starts_uppercase(s: &str) -> bool {
    let mut i = 0;
    while i < s.len() {
        let c = s[i..].chars().next().unwrap();
        if c == '<' {
            if let Some((len, _)) = tag_at(&s[i..]) {
                i += len;
                continue;
            }
        }
        if OPENERS.contains(&c) {
            i += c.len_utf8();
            continue;
        }
        return c.is_uppercase();
    }
    false
}

fn ends_with_abbreviation(before: &str) -> bool {
    let word = before
        .rsplit(|c: char| c.is_whitespace() || c == '>' || OPENERS.contains(&c))
        .next()
        .unwrap_or("");
    ABBREVIATIONS.contains(&word)
}

fn push_trimmed(raw: &str, r: Range<usize>, out: &mut Vec<Range<usize>>) {
    let piece = &raw[r.clone()];
    let lead = piece.len() - piece.trim_start().len();
    let trimmed = piece.trim();
    if !trimmed.is_empty() {
        let begin = r.start + lead;
        out.push(begin..begin + trimmed.len());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_clauses() {
        assert_eq!(split_sentences("A. B."), vec!["A.", "B."]);
    }

    #[test]
    fn empty_input() {
        assert!(split_sentences("").is_empty());
        assert!(split_sentences("  \n ").is_empty());
    }

    #[test]
    fn never_splits_inside_timex() {
        let raw = "He left at <TIMEX3 tid=\"t1\" type=\"TIME\">5 p.m. Monday</TIMEX3> and slept.";
        assert_eq!(split_sentences(raw), vec![raw]);
    }

    #[test]
    fn lowercase_continuation_does_not_split() {
        assert_eq!(
            split_sentences("It costs 3.5 dollars. and more."),
            vec!["It costs 3.5 dollars. and more."]
        );
    }

    #[test]
    fn abbreviations() {
        assert_eq!(
            split_sentences("Mr. Mark filed. Dr. Who agreed."),
            vec!["Mr. Mark filed.", "Dr. Who agreed."]
        );
    }

    #[test]
    fn next_sentence_opening_with_tag() {
        let raw = "It was late. <TIMEX3 tid=\"t1\" type=\"DATE\">Yesterday</TIMEX3> it rained.";
        assert_eq!(split_sentences(raw).len(), 2);
    }

    #[test]
    fn closing_quotes_stay_with_sentence() {
        assert_eq!(
            split_sentences("He said \"go.\" Then left!"),
            vec!["He said \"go.\"", "Then left!"]
        );
    }

    #[test]
    fn closing_tags_after_punctuation() {
        assert_eq!(split_sentences("<S>It ended.</S> <S>Then more.</S>").len(), 2);
    }

    #[test]
    fn blank_line_is_a_boundary() {
        assert_eq!(
            split_sentences("Title line\n\nBody starts here."),
            vec!["Title line", "Body starts here."]
        );
    }

    #[test]
    fn concatenation_preserves_content() {
        let raw = "One thing. Two things!  Three?\nFour.";
        let joined: String = split_sentences(raw).concat();
        let squeezed: String = raw.chars().filter(|c| !c.is_whitespace()).collect();
        assert_eq!(
            joined.chars().filter(|c| !c.is_whitespace()).collect::<String>(),
            squeezed
        );
    }
}
