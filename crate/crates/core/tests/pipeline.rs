mod common;

use std::fs;

use tempnorm::backend::BackendKind;
use tempnorm::corpus::Document;
use tempnorm::eval::PredictionRecord;
use tempnorm::pipeline::{
    audit_path, predictions_path, run_experiment, sweep, tag_and_normalize, ExtractedSpan, SweepAxis, Workspace,
};
use tempnorm::prompting::context_values;
use tempnorm::rules::{normalize, AnchorContext};
use tempnorm::selection::SelectionStrategy;

fn read_records(path: &std::path::Path) -> Vec<PredictionRecord> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn keep_lines(path: &std::path::Path, n: usize) {
    let text = fs::read_to_string(path).unwrap();
    let kept: String = text.lines().take(n).map(|l| format!("{l}\n")).collect();
    fs::write(path, kept).unwrap();
}

#[test]
fn resume_after_interruption_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::micro(
        SelectionStrategy::TargetCentricContextWindow,
        BackendKind::RuleBased,
        dir.path(),
    );
    run_experiment(&cfg).unwrap();
    let preds = predictions_path(&cfg.output_dir, 1);
    let audit = audit_path(&cfg.output_dir, 1);
    let full = (fs::read(&preds).unwrap(), fs::read(&audit).unwrap());

    // cut in the middle of a document
    keep_lines(&preds, 7);
    keep_lines(&audit, 5);
    cfg.resume = true;
    run_experiment(&cfg).unwrap();
    assert_eq!(fs::read(&preds).unwrap(), full.0);
    assert_eq!(fs::read(&audit).unwrap(), full.1);
}

#[test]
fn resume_without_previous_output_starts_fresh() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::micro(
        SelectionStrategy::TargetCentricSentence,
        BackendKind::Oracle,
        dir.path(),
    );
    cfg.resume = true;
    assert_eq!(run_experiment(&cfg).unwrap().accuracy(), 1.0);
}

#[test]
fn oracle_k_sweep_stays_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::micro(
        SelectionStrategy::TargetCentricSentence,
        BackendKind::Oracle,
        dir.path(),
    );
    let rows = sweep(&cfg, SweepAxis::K, &[1, 5, 10, 15]).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.mean == 1.0 && r.stdev == 0.0));
    let csv = fs::read_to_string(dir.path().join("sweep_k.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(dir.path().join("k-15/report.json").exists());
}

#[test]
fn window_sweep_is_monotone_on_anchor_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::config(
        common::fixtures().join("window/window.json"),
        SelectionStrategy::TargetCentricContextWindow,
        BackendKind::RuleBased,
        dir.path(),
    );
    let rows = sweep(&cfg, SweepAxis::WindowLength, &[0, 1, 3, 5, 10]).unwrap();
    let means: Vec<f64> = rows.iter().map(|r| r.mean).collect();
    // six relative expressions whose anchors sit 1, 2 or 4 sentences back
    let want = [3.0 / 6.0, 4.0 / 6.0, 5.0 / 6.0, 1.0, 1.0];
    for (got, want) in means.iter().zip(want) {
        assert!((got - want).abs() < 1e-12, "{means:?}");
    }
    assert!(means.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn empty_sweep_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::micro(
        SelectionStrategy::TargetCentricSentence,
        BackendKind::Oracle,
        dir.path(),
    );
    let err = sweep(&cfg, SweepAxis::K, &[]).unwrap_err();
    assert!(matches!(err, tempnorm::PipelineError::Config(_)));
}

fn gold_extraction(ws: &Workspace) -> Vec<ExtractedSpan> {
    ws.targets()
        .iter()
        .flat_map(|d| {
            d.timexes().map(move |(s, t)| {
                let span = d.document_span(s.index, t.span);
                ExtractedSpan {
                    doc_id: d.doc_id.clone(),
                    begin: span.begin,
                    end: span.end,
                    ttype: t.ttype,
                }
            })
        })
        .collect()
}

fn write_jsonl(path: &std::path::Path, spans: &[ExtractedSpan]) {
    let body: String = spans.iter().map(|s| serde_json::to_string(s).unwrap() + "\n").collect();
    fs::write(path, body).unwrap();
}

#[test]
fn tagging_with_gold_spans_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::micro(
        SelectionStrategy::TargetCentricContextWindow,
        BackendKind::Oracle,
        &dir.path().join("out"),
    );
    let ws = Workspace::load(&cfg).unwrap();
    let spans = gold_extraction(&ws);
    let file = dir.path().join("spans.jsonl");
    write_jsonl(&file, &spans);
    let r = tag_and_normalize(&cfg, &file).unwrap();
    assert_eq!((r.gold, r.predicted, r.strict_matches), (31, 31, 31));
    assert_eq!(r.strict_f1, 1.0);
    assert_eq!(r.value_f1, 1.0);
    assert!(cfg.output_dir.join("tagging.json").exists());
}

#[test]
fn missing_spans_lower_recall_whatever_the_backend() {
    for kind in [BackendKind::Oracle, BackendKind::Broken, BackendKind::RuleBased] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = common::micro(SelectionStrategy::TargetCentricSentence, kind, &dir.path().join("out"));
        let ws = Workspace::load(&cfg).unwrap();
        let spans = gold_extraction(&ws);
        let file = dir.path().join("spans.jsonl");
        write_jsonl(&file, &spans[2..]);
        let r = tag_and_normalize(&cfg, &file).unwrap();
        assert_eq!(r.strict_precision, 1.0, "{kind:?}");
        assert_eq!(r.strict_recall, 29.0 / 31.0, "{kind:?}");
        assert_eq!(r.relaxed_recall, 29.0 / 31.0, "{kind:?}");
    }
}

#[test]
fn span_outside_the_document_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::micro(
        SelectionStrategy::TargetCentricSentence,
        BackendKind::Oracle,
        dir.path(),
    );
    let file = dir.path().join("spans.jsonl");
    fs::write(
        &file,
        "{\"doc_id\":\"echr-001\",\"begin\":5000,\"end\":5004,\"type\":\"DATE\"}\n",
    )
    .unwrap();
    let err = tag_and_normalize(&cfg, &file).unwrap_err();
    assert!(matches!(err, tempnorm::PipelineError::Input(_)), "{err}");
}

#[test]
fn tagging_rejects_unknown_documents() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::micro(
        SelectionStrategy::TargetCentricSentence,
        BackendKind::Oracle,
        dir.path(),
    );
    let file = dir.path().join("spans.jsonl");
    fs::write(&file, "{\"doc_id\":\"nope\",\"begin\":0,\"end\":3,\"type\":\"DATE\"}\n").unwrap();
    assert!(tag_and_normalize(&cfg, &file).is_err());
}

/// Values the rule backend should produce when each sentence sees the
/// predictions of the `window` sentences before it.
fn sequential_rules(doc: &Document, window: usize) -> Vec<Option<String>> {
    let mut per_sentence: Vec<Vec<String>> = vec![Vec::new(); doc.sentences.len()];
    let mut out = Vec::new();
    for s in &doc.sentences {
        let from = s.index.saturating_sub(window);
        let previous = context_values(per_sentence[from..s.index].iter().flatten().map(String::as_str));
        let anchor = AnchorContext {
            dct: Some(doc.dct),
            previous_values: previous,
        };
        for t in &s.timexes {
            let v = normalize(&t.text, t.ttype, &anchor).value;
            if let Some(v) = &v {
                per_sentence[s.index].push(v.clone());
            }
            out.push(v);
        }
    }
    out
}

#[test]
fn rule_backend_matches_direct_normalization() {
    for (strategy, window) in [
        (SelectionStrategy::TargetCentricSentence, 0),
        (SelectionStrategy::TargetCentricContextWindow, 3),
    ] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = common::micro(strategy, BackendKind::RuleBased, dir.path());
        run_experiment(&cfg).unwrap();
        let records = read_records(&predictions_path(&cfg.output_dir, 1));
        let ws = Workspace::load(&cfg).unwrap();
        let want: Vec<Option<String>> = ws.targets().iter().flat_map(|d| sequential_rules(d, window)).collect();
        let got: Vec<Option<String>> = records.iter().map(|r| r.predicted_value.clone()).collect();
        assert_eq!(got, want, "{strategy:?}");
    }
}

#[test]
fn broken_backend_scores_zero_with_every_sentence_failed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::micro(SelectionStrategy::ExpertPrompt, BackendKind::Broken, dir.path());
    let r = run_experiment(&cfg).unwrap();
    assert_eq!(r.accuracy(), 0.0);
    assert_eq!(r.failures().success, 0);
    let records = read_records(&predictions_path(&cfg.output_dir, 1));
    assert!(records
        .iter()
        .all(|r| r.failure.is_some() && r.predicted_value.is_none()));
}

#[test]
fn reports_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::micro(SelectionStrategy::TargetAgnostic, BackendKind::Oracle, dir.path());
    cfg.runs = 2;
    let r = run_experiment(&cfg).unwrap();
    assert_eq!(r.runs.len(), 2);
    for f in ["report.json", "report.txt", "failures.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let table = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(table.contains("100.0") || table.contains("1.000"), "{table}");
}

/// Accuracy of the rule grammar when every window is filled with gold values.
fn gold_anchor_accuracy(docs: &[&Document], window: usize) -> f64 {
    let (mut total, mut correct) = (0, 0);
    for doc in docs {
        for s in &doc.sentences {
            let from = s.index.saturating_sub(window);
            let previous = context_values(
                doc.sentences[from..s.index]
                    .iter()
                    .flat_map(|p| p.timexes.iter().filter_map(|t| t.value.as_deref())),
            );
            let anchor = AnchorContext {
                dct: Some(doc.dct),
                previous_values: previous,
            };
            for t in &s.timexes {
                total += 1;
                if normalize(&t.text, t.ttype, &anchor).value == t.value {
                    correct += 1;
                }
            }
        }
    }
    correct as f64 / total as f64
}

#[test]
fn rule_backend_accuracy_equals_gold_anchor_computation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::micro(
        SelectionStrategy::TargetCentricContextWindow,
        BackendKind::RuleBased,
        dir.path(),
    );
    let report = run_experiment(&cfg).unwrap();
    let ws = Workspace::load(&cfg).unwrap();
    let want = gold_anchor_accuracy(&ws.targets(), 3);
    assert_eq!(report.accuracy(), want);
}
