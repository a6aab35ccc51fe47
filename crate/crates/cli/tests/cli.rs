use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn conelab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conelab")).args(args).current_dir(dir).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

#[test]
fn classify_prints_a_report() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "ex2.json", r#"{"V_S": "x1/2", "F": "-1", "g": ["x1"], "d": 1}"#);
    let out = conelab(&["classify", "ex2.json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let roots = v["roots"]["nonzero_roots"].as_array().unwrap();
    assert_eq!(roots.len(), 2);
    assert_eq!(v["label"], "BranchesExist");
}

#[test]
fn classify_with_explicit_sigma_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "circle.json", r#"{"potential": {"V_S": "x2", "F": "1", "g": ["x1^2 + x2^2 - 1"], "d": 2}, "sigma": [1.0, 0.0]}"#);
    let out = conelab(&["classify", "circle.json"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["geometry"]["sigma"], serde_json::json!([1.0, 0.0]));

    let out = conelab(&["classify", "--sweep", "circle.json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v.as_array().unwrap().len() > 4);

    write(dir.path(), "short.json", r#"{"potential": {"V_S": "x2", "F": "1", "g": ["x1"], "d": 2}, "sigma": [0.0]}"#);
    assert_eq!(conelab(&["classify", "short.json"], dir.path()).status.code(), Some(2));
}

#[test]
fn run_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "suite.json", r#"{"experiment": "classify_suite", "output_dir": "out"}"#);
    let out = conelab(&["run", "suite.json"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    for f in ["metrics.csv", "events.json", "record.json"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    let out = conelab(&["report", "out"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["consistent"], true);
    assert_eq!(v["experiment"], "classify_suite");
}

#[test]
fn failing_rules_exit_one() {
    // A single eps cannot show the retention trend, so that rule fails.
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "cone.json",
        r#"{"experiment": "static_cone", "eps": [0.015625], "grid": {"half_width": 4, "n": 1024}}"#,
    );
    let out = conelab(&["run", "cone.json", "--out", "res"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("PASS parity") && text.contains("FAIL retention"), "{text}");
    assert!(dir.path().join("res/record.json").exists());
}

#[test]
fn bad_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "bad.json", r#"{"experiment": "rebound", "eps": [2.0]}"#);
    let out = conelab(&["run", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("eps"));
    assert_eq!(conelab(&["report", "nowhere"], dir.path()).status.code(), Some(2));
    assert_eq!(conelab(&["classify", "missing.json"], dir.path()).status.code(), Some(2));
}
