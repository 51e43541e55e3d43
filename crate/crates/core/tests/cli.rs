use std::path::Path;
use std::process::{Command, Output};

fn slipflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slipflow")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.in.json");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn solve_then_diagnose_succeed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"geometry": {"cells": [8, 4, 4]}}"#);
    let out_dir = tmp.path().join("run");
    let out = out_dir.display().to_string();
    let solve = slipflow(&["solve", "--config", &cfg, "--out", &out, "--mode", "split"]);
    assert!(solve.status.success(), "{}", String::from_utf8_lossy(&solve.stderr));
    let echo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(echo["solver"]["mode"], "split");
    assert_eq!(echo["output"]["directory"], out.as_str());

    let diag = slipflow(&["diagnose", "--config", &cfg, "--out", &out]);
    assert!(diag.status.success(), "{}", String::from_utf8_lossy(&diag.stdout));
}

#[test]
fn bad_config_gives_structured_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"physics": {"mu": -1}}"#);
    let out = slipflow(&["solve", "--config", &cfg]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "config_validation");
    assert_eq!(err["key"], "physics.mu");

    let cfg = write_config(tmp.path(), "{\n  \"physics\": [\n");
    let out = slipflow(&["verify", "--config", &cfg]);
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "config_parse");
    assert!(err["line"].as_u64().unwrap() >= 2);
}

#[test]
fn nonconverged_solve_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"geometry": {"cells": [8, 4, 4]}, "solver": {"max_iterations": 1}}"#,
    );
    let out_dir = tmp.path().join("run").display().to_string();
    let out = slipflow(&["solve", "--config", &cfg, "--out", &out_dir]);
    assert_eq!(out.status.code(), Some(1));
    let csv = std::fs::read_to_string(Path::new(&out_dir).join("history.csv")).unwrap();
    assert!(csv.trim_end().ends_with(",max_iter"));
}

#[test]
fn unknown_mode_is_rejected_by_the_parser() {
    let out = slipflow(&["solve", "--config", "x.json", "--mode", "direct"]);
    assert!(!out.status.success());
}
