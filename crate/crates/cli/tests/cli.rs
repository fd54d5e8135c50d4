use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/mini/experiment.json")
}

fn cogharness(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cogharness")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn run_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    let config = fixture_config();
    let out = cogharness(&["run", "--config", config.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("zero_shot"));

    let out = cogharness(&["report", "--config", config.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("F1_CI"));
}

#[test]
fn select_demos_prints_audit_json() {
    let tmp = tempfile::tempdir().unwrap();
    let config = fixture_config();
    let out = cogharness(&[
        "select-demos",
        "--config",
        config.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
        "--subject",
        "S007",
        "--policy",
        "average_similar",
        "--n",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(json["policy"], "average_similar");
    assert_eq!(json["n"], 2);
    let items = json["items"].as_array().unwrap();
    assert_eq!(items.len(), 2);
    assert_eq!(items[0]["label"], "CN");
    assert_eq!(items[1]["label"], "CI");
}

#[test]
fn split_and_export() {
    let tmp = tempfile::tempdir().unwrap();
    let config = fixture_config();
    let dir = tmp.path().to_str().unwrap();
    let out = cogharness(&["split", "--config", config.to_str().unwrap(), "--out", dir, "--validation-n", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = std::fs::read_to_string(tmp.path().join("manifest.csv")).unwrap();
    assert_eq!(manifest.matches(",validation,").count(), 2);

    let out = cogharness(&["export-embeddings", "--config", config.to_str().unwrap(), "--out", dir]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("embeddings.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
}

#[test]
fn bad_config_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("broken.json");
    std::fs::write(&path, r#"{"name": "x"}"#).unwrap();
    let out = cogharness(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let out = cogharness(&["ingest", "--config", tmp.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}
