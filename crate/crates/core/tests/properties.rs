use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use tempnorm::backend::{parse_response, NormalizationOutcome};
use tempnorm::corpus::{parse_fragment, parse_timeml, Split, TemporalType};
use tempnorm::embedding::{top_k_similar, CandidateExample, EmbeddingVector, Granularity, VectorIndex};
use tempnorm::eval::{extraction_prf, value_accuracy, PredictionRecord, TaggedSpan};
use tempnorm::prompting::{context_values, output_map, render_annotated};
use tempnorm::rules::{normalize, AnchorContext};
use tempnorm::selection::select_target_agnostic;

fn candidate(i: usize, values: Vec<f64>) -> CandidateExample {
    CandidateExample {
        id: format!("c{i:03}"),
        granularity: Granularity::Sentence,
        text: String::new(),
        language: "en".into(),
        source_doc: format!("d{i}"),
        split: Split::Train,
        dct: None,
        previous_values: vec![],
        vector: EmbeddingVector::normalized(values).unwrap(),
    }
}

/// Vectors with a few exact duplicates mixed in.
fn pool(dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(
        (
            prop::collection::vec(-1.0f64..1.0, dim),
            any::<prop::sample::Index>(),
            any::<bool>(),
        ),
        1..60,
    )
    .prop_map(move |raw| {
        let mut out: Vec<Vec<f64>> = Vec::new();
        for (v, pick, dup) in raw {
            let usable = v.iter().any(|x| x.abs() > 1e-3);
            if dup && !out.is_empty() {
                out.push(out[pick.index(out.len())].clone());
            } else if usable {
                out.push(v);
            }
        }
        if out.is_empty() {
            out.push(vec![1.0; dim]);
        }
        out
    })
}

fn index_of(vectors: &[Vec<f64>]) -> VectorIndex {
    let entries = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| candidate(i, v.clone()))
        .collect();
    VectorIndex::new(vectors[0].len(), entries).unwrap()
}

fn ids(picks: &[tempnorm::embedding::Scored<'_>]) -> Vec<String> {
    picks.iter().map(|s| s.candidate.id.clone()).collect()
}

proptest! {
    #[test]
    fn top_k_equals_sorted_scores(vectors in pool(6), q in prop::collection::vec(-1.0f64..1.0, 6), k in 1usize..20) {
        prop_assume!(q.iter().any(|x| x.abs() > 1e-3));
        let index = index_of(&vectors);
        let q = EmbeddingVector::normalized(q).unwrap();
        let got = top_k_similar(&index, &q, k);
        prop_assert_eq!(got.len(), k.min(index.len()));
        let mut all: Vec<(f64, String)> = index
            .entries()
            .iter()
            .map(|e| (e.vector.as_slice().iter().zip(q.as_slice()).map(|(a, b)| a * b).sum(), e.id.clone()))
            .collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let want: Vec<String> = all.into_iter().take(k).map(|p| p.1).collect();
        prop_assert_eq!(ids(&got), want);
    }

    #[test]
    fn selection_ignores_insertion_order(vectors in pool(5), seed in any::<u64>(), k in 1usize..10) {
        let index = index_of(&vectors);
        let mut shuffled: Vec<CandidateExample> = index.entries().to_vec();
        let n = shuffled.len();
        for i in 0..n {
            let j = (seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) % n as u64) as usize;
            shuffled.swap(i, j);
        }
        let other = VectorIndex::new(5, shuffled).unwrap();
        prop_assert_eq!(ids(&select_target_agnostic(&index, k, 0.7)), ids(&select_target_agnostic(&other, k, 0.7)));
        let q = index.entries()[0].vector.clone();
        prop_assert_eq!(ids(&top_k_similar(&index, &q, k)), ids(&top_k_similar(&other, &q, k)));
    }

    #[test]
    fn agnostic_picks_grow_by_prefix_and_stay_dissimilar(vectors in pool(4), k in 1usize..12, t in 0.0f64..1.0) {
        let index = index_of(&vectors);
        let small = ids(&select_target_agnostic(&index, k, t));
        let large = select_target_agnostic(&index, k + 1, t);
        prop_assert!(small.len() <= k);
        prop_assert_eq!(&ids(&large)[..small.len()], &small[..]);
        for (i, a) in large.iter().enumerate() {
            for b in &large[..i] {
                prop_assert!(a.candidate.vector.cosine(&b.candidate.vector) <= t);
            }
        }
    }

    #[test]
    fn rules_ignore_case_and_spacing(
        n in 1u32..40,
        unit in prop::sample::select(vec!["day", "days", "week", "weeks", "month", "months", "year", "years", "hours"]),
        tail in prop::sample::select(vec!["", " ago", " later", " earlier"]),
        y in 1950i32..2050, m in 1u32..13, d in 1u32..29,
    ) {
        let text = format!("{n} {unit}{tail}");
        let anchor = AnchorContext::new(chrono::NaiveDate::from_ymd_opt(y, m, d).unwrap());
        for ttype in TemporalType::ALL {
            let base = normalize(&text, ttype, &anchor);
            let loud = normalize(&format!("  {}  ", text.to_uppercase().replace(' ', "   ")), ttype, &anchor);
            prop_assert_eq!(&base.value, &loud.value);
            if let Some(v) = &base.value {
                prop_assert!(tempnorm::corpus::validate_value(v, ttype), "{} -> {}", text, v);
            }
        }
    }

    #[test]
    fn markup_round_trips(
        words in prop::collection::vec("[a-zA-Z]{1,8}", 1..12),
        marks in prop::collection::vec(any::<bool>(), 12),
    ) {
        let mut raw = String::from("DCT: 2020-01-01\n");
        let mut tid = 0;
        for (i, w) in words.iter().enumerate() {
            if i > 0 {
                raw.push(' ');
            }
            if marks[i] {
                tid += 1;
                raw.push_str(&format!("<TIMEX3 tid=\"t{tid}\" type=\"DATE\" value=\"2020\">{w}</TIMEX3>"));
            } else {
                raw.push_str(w);
            }
        }
        raw.push('.');
        let doc = parse_timeml(&raw, "p").unwrap();
        let again = parse_timeml(&doc.to_timeml(), "p").unwrap();
        prop_assert_eq!(&doc, &again);
        for s in &doc.sentences {
            let frag = parse_fragment(&render_annotated(s)).unwrap();
            prop_assert_eq!(&frag.text, &s.text);
            let spans: Vec<_> = frag.timexes.iter().map(|t| t.span).collect();
            let want: Vec<_> = s.timexes.iter().map(|t| t.span).collect();
            prop_assert_eq!(spans, want);
        }
        prop_assert_eq!(doc.timex_count(), tid);
    }

    #[test]
    fn output_map_parses_back(pairs in prop::collection::btree_map("[a-z][a-z0-9 ']{0,10}[a-z0-9]", "[A-Z0-9:-]{0,10}", 1..8)) {
        let folded: BTreeSet<String> = pairs.keys().map(|k| k.to_lowercase()).collect();
        prop_assume!(folded.len() == pairs.len());
        let raw = format!("Output: {}", output_map(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))));
        let expected: Vec<String> = pairs.keys().cloned().collect();
        match parse_response(&raw, &expected) {
            NormalizationOutcome::Values(got) => prop_assert_eq!(got, pairs),
            other => prop_assert!(false, "{raw}: {other:?}"),
        }
    }

    #[test]
    fn context_values_keep_last_occurrence(values in prop::collection::vec("[a-c]", 0..12)) {
        let out = context_values(values.iter().map(String::as_str));
        let distinct: BTreeSet<&String> = out.iter().collect();
        prop_assert_eq!(distinct.len(), out.len());
        let last_pos = |v: &String| values.iter().rposition(|x| x == v).unwrap();
        prop_assert!(out.windows(2).all(|w| last_pos(&w[0]) < last_pos(&w[1])));
        prop_assert_eq!(distinct, values.iter().collect::<BTreeSet<_>>());
    }

    #[test]
    fn strict_scores_are_symmetric(a in spans(), b in spans()) {
        let ab = extraction_prf(&a, &b).unwrap();
        let ba = extraction_prf(&b, &a).unwrap();
        prop_assert_eq!(ab.strict_matches, ba.strict_matches);
        prop_assert_eq!(ab.strict_precision, ba.strict_recall);
        prop_assert_eq!(ab.strict_recall, ba.strict_precision);
        prop_assert!((ab.strict_f1 - ba.strict_f1).abs() < 1e-12);
        prop_assert!(ab.strict_matches <= ab.relaxed_matches);
    }

    #[test]
    fn accuracy_ignores_record_order(records in prop::collection::vec(record(), 0..30), seed in any::<u64>()) {
        let mut shuffled = records.clone();
        let n = shuffled.len();
        for i in 0..n {
            let j = (seed.wrapping_add(i as u64 * 2654435761) % n as u64) as usize;
            shuffled.swap(i, j);
        }
        prop_assert_eq!(value_accuracy(&records), value_accuracy(&shuffled));
    }
}

/// Non-overlapping spans over two documents.
fn spans() -> impl Strategy<Value = Vec<TaggedSpan>> {
    prop::collection::btree_set((0usize..2, 0usize..30), 0..20).prop_map(|cells| {
        cells
            .into_iter()
            .map(|(doc, cell)| TaggedSpan {
                doc_id: format!("d{doc}"),
                begin: cell * 10 + cell % 3,
                end: cell * 10 + 6,
                value: Some(format!("v{}", cell % 4)),
            })
            .collect()
    })
}

fn record() -> impl Strategy<Value = PredictionRecord> {
    (
        0usize..4,
        0usize..5,
        prop::sample::select(TemporalType::ALL.to_vec()),
        0u8..3,
        0u8..3,
    )
        .prop_map(|(doc, sentence, ttype, gold, pred)| PredictionRecord {
            doc_id: format!("d{doc}"),
            sentence_index: sentence,
            tid: format!("t{sentence}"),
            ttype,
            text: "x".into(),
            gold_value: Some(format!("v{gold}")),
            predicted_value: (pred > 0).then(|| format!("v{pred}")),
            failure: None,
            realization: None,
        })
}

#[test]
fn accuracy_of_empty_input_is_flagged() {
    let r = value_accuracy(&[]);
    assert!(r.empty);
    assert_eq!(r.total, 0);
    let _: BTreeMap<TemporalType, _> = r.per_type;
}
