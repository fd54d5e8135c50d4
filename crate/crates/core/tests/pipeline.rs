mod common;

use std::fs;

use cogharness_core::corpus::{Gender, Split};
use cogharness_core::experiment::{
    cmd_error_analysis, cmd_report, cmd_run, read_results, AnalysisOptions, BackendConfig, BackendKind,
    ExperimentConfig, OutcomeGroup, RunOverrides, RESOLVED_CONFIG_FILE, RUN_LOG_FILE, SUMMARY_FILE,
};
use cogharness_core::runner::SCHEMA_VERSION;
use cogharness_core::{load_corpus, Label, Prediction, PredictionRecord, PromptKind, StrategySpec, SubjectRecord};
use common::fixture_dir;
use serde_json::json;

fn fixture_config(out: &std::path::Path) -> ExperimentConfig {
    let mut config = ExperimentConfig::load(&fixture_dir().join("experiment.json")).unwrap();
    RunOverrides { output_dir: Some(out.to_path_buf()), seed: None }.apply(&mut config);
    config
}

fn strategy(value: serde_json::Value) -> StrategySpec {
    serde_json::from_value(value).unwrap()
}

#[test]
fn zero_shot_run_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = fixture_config(tmp.path());
    config.strategies = vec![strategy(json!({"kind": "zero_shot", "backend": "mock", "split": "all"}))];
    let summary = cmd_run(&config).unwrap();
    assert!(summary.run_dir.starts_with(tmp.path().join("mini")));

    let records = read_results(&summary.run_dir.join("zero_shot.jsonl")).unwrap();
    assert_eq!(records.len(), 8);
    let ids: Vec<&str> = records.iter().map(|r| r.subject_id.as_str()).collect();
    assert_eq!(ids, ["S001", "S002", "S003", "S004", "S005", "S006", "S007", "S008"]);
    for r in &records {
        assert_eq!(r.schema_version, SCHEMA_VERSION);
        assert_eq!(r.prompt_kind, PromptKind::ZeroShot);
        assert_eq!(r.raw_outputs.len(), 1);
        assert!(r.errors.is_empty());
    }

    let log = fs::read_to_string(summary.run_dir.join(RUN_LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 8);
    for line in log.lines() {
        let _: serde_json::Value = serde_json::from_str(line).unwrap();
    }
    let resolved = fs::read_to_string(summary.run_dir.join(RESOLVED_CONFIG_FILE)).unwrap();
    let reloaded = ExperimentConfig::from_json(&resolved).unwrap();
    assert_eq!(reloaded.strategies, config.strategies);
    let on_disk: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(summary.run_dir.join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(on_disk["strategies"][0]["records"], 8);
}

#[test]
fn report_agrees_with_hand_count() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = fixture_config(tmp.path());
    config.strategies = vec![strategy(json!({"kind": "zero_shot", "backend": "mock", "split": "all"}))];
    let summary = cmd_run(&config).unwrap();
    let report = cmd_report(&summary.run_dir).unwrap();
    // Rule mock at 50 words: S006 is a false positive and S007 a false negative.
    let row = &report.rows[0];
    assert_eq!((row.counts.tp, row.counts.fp, row.counts.tn, row.counts.fn_), (3, 1, 3, 1));
    assert!((row.f1_ci - 0.75).abs() < 1e-12);
    let csv = fs::read_to_string(summary.run_dir.join("report.csv")).unwrap();
    assert!(csv.starts_with("strategy,n,F1_CI,F1_CN,precision_CI,recall_CI,AUC,abstains\n"));
    assert!(csv.contains("zero_shot,,0.7500,0.7500,0.7500,0.7500,,0"));
}

#[test]
fn sweep_picks_a_configured_shot_count() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = fixture_config(tmp.path());
    config.strategies =
        vec![strategy(json!({"kind": "icl", "backend": "mock", "policy": "most_similar", "shots": "sweep"}))];
    let summary = cmd_run(&config).unwrap();
    let chosen = summary.strategies[0].chosen_n.unwrap();
    assert!([2, 4].contains(&chosen));
    let records = read_results(&summary.run_dir.join("icl_most_similar.jsonl")).unwrap();
    assert_eq!(records.len(), 2);
    assert!(records.iter().all(|r| r.split == Split::Test && r.n == Some(chosen) && r.demo_ids.len() == chosen));
    let sweep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(summary.run_dir.join("icl_most_similar.sweep.json")).unwrap())
            .unwrap();
    assert_eq!(sweep["validation"].as_array().unwrap().len(), 2);
}

#[test]
fn missing_credentials_fail_before_any_output() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = fixture_config(tmp.path());
    let mut http = BackendConfig::rule("remote", 0);
    http.kind = BackendKind::Http;
    http.threshold = None;
    http.endpoint = Some("http://127.0.0.1:9/v1/chat/completions".into());
    http.model = Some("m".into());
    http.auth_env = Some("COGHARNESS_TEST_SURELY_UNSET_TOKEN".into());
    config.backends.push(http);
    config.strategies = vec![strategy(json!({"kind": "zero_shot", "backend": "remote"}))];
    let err = cmd_run(&config).unwrap_err();
    assert_eq!(err.exit_code(), 1, "{err}");
    assert!(!tmp.path().join("mini").exists());
}

#[test]
fn too_many_failures_abort_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = fixture_config(tmp.path());
    let mut scripted = BackendConfig::rule("script", 0);
    scripted.kind = BackendKind::Scripted;
    scripted.threshold = None;
    scripted.replies = Some(vec!["{\"label\": \"AD\"}".into()]);
    config.backends.push(scripted);
    config.parallelism = 1;
    config.strategies = vec![strategy(json!({"kind": "zero_shot", "backend": "script", "split": "all"}))];
    let err = cmd_run(&config).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
    assert!(err.to_string().contains("7 of 8"), "{err}");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let text = fs::read_to_string(fixture_dir().join("experiment.json")).unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value["strategies"][0]["temprature"] = json!(0.3);
    let err = ExperimentConfig::from_json(&value.to_string()).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

fn prediction(subject: &SubjectRecord, predicted: Prediction) -> PredictionRecord {
    PredictionRecord {
        schema_version: SCHEMA_VERSION,
        subject_id: subject.subject_id.clone(),
        strategy: "planted".into(),
        strategy_fingerprint: "0".repeat(16),
        prompt_kind: PromptKind::ZeroShot,
        prompt_hash: String::new(),
        split: subject.split,
        true_label: subject.diagnosis,
        n: None,
        demo_ids: vec![],
        temperature: 0.0,
        raw_outputs: vec![],
        parsed_labels: vec![predicted],
        final_label: predicted,
        p_ci: None,
        rationales: vec![],
        errors: vec![],
    }
}

fn subject(id: &str, dx: Label, text: &str) -> SubjectRecord {
    SubjectRecord::new(id, dx, Some(28), Gender::F, 70.0, 60.0, text, Split::Test).unwrap()
}

fn write_results(dir: &std::path::Path, records: &[PredictionRecord]) -> std::path::PathBuf {
    let path = dir.join("planted.jsonl");
    let lines: Vec<String> = records.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

#[test]
fn planted_repetition_separates_false_positives() {
    let repetitive = [
        "the boy the boy is on the stool and the girl the girl wants a cookie",
        "she is she is washing dishes and the water the water runs over",
        "the jar the jar is open and he is he is falling down",
        "mother is drying drying a plate a plate and the sink the sink spills",
        "a cookie a cookie for the girl and the stool the stool tips",
        "the boy is the boy is reaching up the cabinet the cabinet",
    ];
    let fluent = [
        "the boy stands on a stool reaching for cookies while his sister waits",
        "a woman dries dishes at the sink and water spills onto the floor",
        "the stool is tipping and the boy may fall as he grabs the jar",
        "outside the window there is a garden with a path and some bushes",
        "the girl holds a finger to her lips asking her brother for a cookie",
        "mother seems distracted because the sink overflows near her feet",
    ];
    let mut corpus = Vec::new();
    let mut records = Vec::new();
    for (i, text) in repetitive.iter().enumerate() {
        let s = subject(&format!("FP{i}"), Label::CN, text);
        records.push(prediction(&s, Prediction::CI));
        corpus.push(s);
    }
    for (i, text) in fluent.iter().enumerate() {
        let s = subject(&format!("TN{i}"), Label::CN, text);
        records.push(prediction(&s, Prediction::CN));
        corpus.push(s);
    }
    let s = subject("AB0", Label::CI, "the boy");
    records.push(prediction(&s, Prediction::Abstain));
    corpus.push(s);

    let tmp = tempfile::tempdir().unwrap();
    let results = write_results(tmp.path(), &records);
    let out = tmp.path().join("analysis");
    let report = cmd_error_analysis(&results, &corpus, &out, &AnalysisOptions::default()).unwrap();
    assert_eq!(report.groups[&OutcomeGroup::FP].len(), 6);
    assert_eq!(report.groups[&OutcomeGroup::TN].len(), 6);
    assert_eq!(report.features.len(), 12);
    let row = report
        .tests
        .iter()
        .find(|t| t.feature == "consecutive_repeated_clauses" && t.comparison == "TN vs FP")
        .unwrap();
    assert!(row.flagged && row.p < 0.01, "{row:?}");
    assert_eq!(row.u, 0.0);
    assert!(report.notes.iter().any(|n| n.contains("TP vs FN skipped")));
    assert!(report.notes.iter().any(|n| n.contains("abstaining")));
    for file in ["error_analysis.json", "error_analysis_features.csv", "error_analysis_tests.csv"] {
        assert!(out.join(file).is_file(), "{file}");
    }
}

#[test]
fn perfect_classifier_has_nothing_to_compare() {
    let corpus = load_corpus(&fixture_dir().join("manifest.csv"), &fixture_dir().join("transcripts")).unwrap();
    let records: Vec<PredictionRecord> = corpus.iter().map(|s| prediction(s, s.diagnosis.into())).collect();
    let tmp = tempfile::tempdir().unwrap();
    let results = write_results(tmp.path(), &records);
    let report = cmd_error_analysis(&results, &corpus, tmp.path(), &AnalysisOptions::default()).unwrap();
    assert!(report.tests.is_empty());
    assert!(report.flagged.is_empty());
    assert_eq!(report.notes.iter().filter(|n| n.contains("skipped")).count(), 2);
}
