use std::collections::BTreeMap;

use chrono::NaiveDate;

use crate::error::CorpusError;

use super::markup::{escape_attr, escape_text, line_col, parse_fragment_at, FragmentTimex};
use super::split::sentence_ranges;
use super::{Document, RealizationClass, Sentence, Span, TemporalType, Timex};

/// Attribute carrying a manual realization label on a TIMEX3 element.
pub(crate) const REALIZATION_ATTR: &str = "realization";

#[derive(Debug, Clone)]
pub struct ParseOptions {
    /// Used when the file carries no DCT header.
    pub fallback_dct: Option<NaiveDate>,
    pub language: String,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            fallback_dct: None,
            language: "en".to_string(),
        }
    }
}

/// Parse one annotated document with default options (English, DCT required).
pub fn parse_timeml(raw: &str, doc_id: &str) -> Result<Document, CorpusError> {
    parse_timeml_with(raw, doc_id, &ParseOptions::default())
}

/// Parse one annotated document.
///
/// The DCT comes from a leading `DCT: YYYY-MM-DD` line or a `<DCT>` element
/// (plain date or a TIMEX3 whose `value` starts with the date). When a
/// `<TEXT>` element is present only its content is read.
pub fn parse_timeml_with(raw: &str, doc_id: &str, opts: &ParseOptions) -> Result<Document, CorpusError> {
    let (header_dct, body_range) = locate_body(raw)?;
    let dct = match header_dct.or(opts.fallback_dct) {
        Some(d) => d,
        None => return Err(CorpusError::MissingDct(doc_id.to_string())),
    };
    let body = &raw[body_range.clone()];
    let origin = body_range.start;

    // full pass first so markup errors report the earliest position
    parse_fragment_at(body, raw, origin)?;

    let mut labels = BTreeMap::new();
    let mut sentences = Vec::new();
    for range in sentence_ranges(body) {
        let fragment = parse_fragment_at(&body[range.clone()], raw, origin + range.start)?;
        let lead = fragment.text.chars().take_while(|c| c.is_whitespace()).count();
        let text: String = fragment.text.trim().to_string();
        if text.is_empty() {
            continue;
        }
        let mut timexes = Vec::with_capacity(fragment.timexes.len());
        for ft in fragment.timexes {
            let (timex, label) = build_timex(ft, lead)?;
            if let Some(l) = label {
                labels.insert(timex.tid.clone(), l);
            }
            timexes.push(timex);
        }
        sentences.push(Sentence {
            index: sentences.len(),
            text,
            timexes,
        });
    }

    let doc = Document {
        doc_id: doc_id.to_string(),
        dct,
        language: opts.language.clone(),
        sentences,
        realization_labels: labels,
    };
    doc.validate()?;
    Ok(doc)
}

fn build_timex(ft: FragmentTimex, lead: usize) -> Result<(Timex, Option<RealizationClass>), CorpusError> {
    let at = |message: String| CorpusError::Parse {
        line: ft.line,
        column: ft.column,
        message,
    };
    let tid = ft
        .attr("tid")
        .ok_or_else(|| at("TIMEX3 without tid".into()))?
        .to_string();
    let ttype: TemporalType = ft
        .attr("type")
        .ok_or_else(|| at(format!("TIMEX3 {tid} without type")))?
        .parse()
        .map_err(|e: CorpusError| at(e.to_string()))?;
    let mut value = None;
    let mut label = None;
    let mut attrs = BTreeMap::new();
    for (k, v) in &ft.attrs {
        match k.as_str() {
            "tid" | "type" => {}
            "value" => value = Some(v.clone()),
            REALIZATION_ATTR => label = Some(v.parse().map_err(|e: CorpusError| at(e.to_string()))?),
            _ => {
                attrs.insert(k.clone(), v.clone());
            }
        }
    }
    let span = Span::new(ft.span.begin.saturating_sub(lead), ft.span.end.saturating_sub(lead));
    Ok((
        Timex {
            tid,
            ttype,
            text: ft.text,
            span,
            value,
            attrs,
        },
        label,
    ))
}

/// DCT found in the header, and the byte range of the document body.
fn locate_body(raw: &str) -> Result<(Option<NaiveDate>, std::ops::Range<usize>), CorpusError> {
    let mut dct = None;
    let mut start = 0;

    let first_line_start = raw.len() - raw.trim_start().len();
    let first_line = raw[first_line_start..].lines().next().unwrap_or("");
    if let Some(rest) = first_line.strip_prefix("DCT:") {
        dct = Some(parse_dct(rest.trim()).ok_or_else(|| {
            let (line, column) = line_col(raw, first_line_start);
            CorpusError::Parse {
                line,
                column,
                message: format!("invalid DCT {:?}", rest.trim()),
            }
        })?);
        start = first_line_start + first_line.len();
    } else if let Some((open, close, inner)) = find_element(raw, "DCT") {
        let fragment = parse_fragment_at(&raw[inner.clone()], raw, inner.start)?;
        let candidate = fragment
            .timexes
            .iter()
            .find_map(|t| t.attr("value").map(str::to_string))
            .unwrap_or_else(|| fragment.text.trim().to_string());
        dct = Some(parse_dct(&candidate).ok_or_else(|| {
            let (line, column) = line_col(raw, open);
            CorpusError::Parse {
                line,
                column,
                message: format!("invalid DCT {candidate:?}"),
            }
        })?);
        start = close;
    }

    if let Some((_, _, inner)) = find_element(&raw[start..], "TEXT") {
        return Ok((dct, start + inner.start..start + inner.end));
    }
    Ok((dct, start..raw.len()))
}

/// (start of open tag, end of close tag, inner range) of the first `<name>` element.
fn find_element(raw: &str, name: &str) -> Option<(usize, usize, std::ops::Range<usize>)> {
    let upper = raw.to_ascii_uppercase();
    let open_pat = format!("<{name}");
    let mut from = 0;
    let open = loop {
        let p = from + upper[from..].find(&open_pat)?;
        let next = upper.as_bytes().get(p + open_pat.len())?;
        if *next == b'>' || next.is_ascii_whitespace() {
            break p;
        }
        from = p + 1;
    };
    let open_end = open + raw[open..].find('>')? + 1;
    let close_pat = format!("</{name}>");
    let close = open_end + upper[open_end..].find(&close_pat)?;
    Some((open, close + close_pat.len(), open_end..close))
}

fn parse_dct(s: &str) -> Option<NaiveDate> {
    let head = s.get(..10)?;
    NaiveDate::parse_from_str(head, "%Y-%m-%d").ok()
}

pub(crate) fn render_tag(timex: &Timex, label: Option<RealizationClass>) -> String {
    let mut out = format!("<TIMEX3 tid=\"{}\" type=\"{}\"", escape_attr(&timex.tid), timex.ttype);
    if let Some(v) = &timex.value {
        out.push_str(&format!(" value=\"{}\"", escape_attr(v)));
    }
    if let Some(l) = label {
        out.push_str(&format!(" {REALIZATION_ATTR}=\"{l}\""));
    }
    for (k, v) in &timex.attrs {
        out.push_str(&format!(" {k}=\"{}\"", escape_attr(v)));
    }
    out.push('>');
    out.push_str(&escape_text(&timex.text));
    out.push_str("</TIMEX3>");
    out
}

/// Render a sentence's text with tags produced by `tag` for each annotation.
pub(crate) fn render_with<F>(sentence: &Sentence, mut tag: F) -> String
where
    F: FnMut(&Timex) -> String,
{
    let chars: Vec<char> = sentence.text.chars().collect();
    let mut out = String::with_capacity(sentence.text.len() * 2);
    let mut at = 0;
    for t in &sentence.timexes {
        out.push_str(&escape_text(&chars[at..t.span.begin].iter().collect::<String>()));
        out.push_str(&tag(t));
        at = t.span.end;
    }
    out.push_str(&escape_text(&chars[at..].iter().collect::<String>()));
    out
}

pub(crate) fn serialize(doc: &Document) -> String {
    let mut out = format!("DCT: {}\n", doc.dct.format("%Y-%m-%d"));
    for s in &doc.sentences {
        out.push('\n');
        out.push_str(&render_with(s, |t| {
            render_tag(t, doc.realization_labels.get(&t.tid).copied())
        }));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::char_slice;

    #[test]
    fn figure_five_date() {
        let doc = parse_timeml(
            "DCT: 2014-05-01\nReference for ruling visas would be given on <TIMEX3 tid=\"t2\" type=\"DATE\" value=\"2013-04-30\">30 April 2013</TIMEX3>.",
            "fig5",
        )
        .unwrap();
        let t = &doc.sentences[0].timexes[0];
        assert_eq!(t.ttype, TemporalType::Date);
        assert_eq!(t.text, "30 April 2013");
        assert_eq!(t.value.as_deref(), Some("2013-04-30"));
    }

    #[test]
    fn no_tags() {
        let doc = parse_timeml("DCT: 2000-01-01\nNothing here. Still nothing.", "d").unwrap();
        assert_eq!(doc.sentences.len(), 2);
        assert!(doc.sentences.iter().all(|s| s.timexes.is_empty()));
    }

    #[test]
    fn offsets_match_naive_scan() {
        let raw = "DCT: 2020-03-01\nThe hearing took place on <TIMEX3 tid=\"t1\" type=\"DATE\" value=\"2020-02-14\">14 February 2020</TIMEX3>. \
                   It lasted <TIMEX3 tid=\"t2\" type=\"DURATION\" value=\"PT3H\">three hours</TIMEX3> in total.";
        let doc = parse_timeml(raw, "d").unwrap();
        assert_eq!(doc.sentences.len(), 2);
        // oracle: strip tags by hand, find the phrase by scanning
        for (s, t) in doc.timexes() {
            let naive = naive_strip(&s_raw(raw, s.index));
            let begin = naive.find(&t.text).map(|b| naive[..b].chars().count()).unwrap();
            assert_eq!(t.span, Span::new(begin, begin + t.text.chars().count()));
            assert_eq!(char_slice(&s.text, t.span), Some(t.text.as_str()));
        }
        assert_eq!(doc.sentences[0].timexes[0].span, Span::new(26, 42));
        assert_eq!(doc.sentences[1].timexes[0].span, Span::new(10, 21));
    }

    fn s_raw(raw: &str, i: usize) -> String {
        let body = raw.split_once('\n').unwrap().1;
        body.split(". ").nth(i).unwrap().to_string()
    }

    fn naive_strip(s: &str) -> String {
        let mut out = String::new();
        let mut in_tag = false;
        for c in s.chars() {
            match c {
                '<' => in_tag = true,
                '>' => in_tag = false,
                _ if !in_tag => out.push(c),
                _ => {}
            }
        }
        out
    }

    #[test]
    fn unknown_type_is_a_positioned_error() {
        let err = parse_timeml(
            "DCT: 2020-01-01\nSee <TIMEX3 tid=\"t1\" type=\"EVENT\">then</TIMEX3>.",
            "d",
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 2, column: 5, .. }), "{err:?}");
    }

    #[test]
    fn dct_handling() {
        let raw = "Nothing dated.";
        assert!(matches!(parse_timeml(raw, "d"), Err(CorpusError::MissingDct(_))));
        let opts = ParseOptions {
            fallback_dct: NaiveDate::from_ymd_opt(1999, 1, 2),
            ..Default::default()
        };
        assert_eq!(
            parse_timeml_with(raw, "d", &opts).unwrap().dct,
            opts.fallback_dct.unwrap()
        );

        let tempeval = "<?xml version=\"1.0\" ?>\n<TimeML>\n<DOCID>APW1</DOCID>\n<DCT><TIMEX3 tid=\"t0\" type=\"DATE\" value=\"1998-02-06\" functionInDocument=\"CREATION_TIME\">1998-02-06</TIMEX3></DCT>\n<TEXT>\nOn <TIMEX3 tid=\"t1\" type=\"DATE\" value=\"1998-02-05\">Thursday</TIMEX3> it <EVENT eid=\"e1\">rained</EVENT>.\n</TEXT>\n</TimeML>";
        let doc = parse_timeml(tempeval, "apw").unwrap();
        assert_eq!(doc.dct, NaiveDate::from_ymd_opt(1998, 2, 6).unwrap());
        assert_eq!(doc.sentences.len(), 1);
        assert_eq!(doc.sentences[0].text, "On Thursday it rained.");
        assert_eq!(doc.timex_count(), 1);
    }

    #[test]
    fn duplicate_tid_and_overlap_rejected() {
        let dup = "DCT: 2020-01-01\n<TIMEX3 tid=\"t1\" type=\"DATE\">May</TIMEX3>. And <TIMEX3 tid=\"t1\" type=\"DATE\">June</TIMEX3>.";
        assert!(matches!(parse_timeml(dup, "d"), Err(CorpusError::DuplicateTid { .. })));
    }

    #[test]
    fn pass_through_attributes_and_labels_round_trip() {
        let raw = "DCT: 2020-01-01\nFor <TIMEX3 tid=\"t1\" type=\"DURATION\" value=\"P5Y\" mod=\"MORE_THAN\" realization=\"Explicit\">more than five years</TIMEX3> now.";
        let doc = parse_timeml(raw, "d").unwrap();
        let t = &doc.sentences[0].timexes[0];
        assert_eq!(t.attrs.get("mod").map(String::as_str), Some("MORE_THAN"));
        assert_eq!(doc.realization_labels.get("t1"), Some(&RealizationClass::Explicit));
        assert_eq!(parse_timeml(&doc.to_timeml(), "d").unwrap(), doc);
    }
}
