use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn abcc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_abcc")).args(args).output().unwrap()
}

fn scenario(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name).display().to_string()
}

fn only_file(dir: &Path) -> String {
    std::fs::read_dir(dir).unwrap().next().unwrap().unwrap().path().display().to_string()
}

#[test]
fn check_exit_codes_follow_the_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean");
    let out =
        abcc(&["sim", "run", "--repeat", "1", "--trace-dir", clean.to_str().unwrap(), &scenario("silent-small.json")]);
    assert!(out.status.success());
    assert_eq!(abcc(&["check", &only_file(&clean)]).status.code(), Some(0));

    let churn = dir.path().join("churn");
    let out = abcc(&[
        "sim",
        "run",
        "--repeat",
        "1",
        "--trace-dir",
        churn.to_str().unwrap(),
        &scenario("churn-violation.toml"),
    ]);
    assert!(out.status.success());
    let out = abcc(&["check", &only_file(&churn)]);
    assert_eq!(out.status.code(), Some(2));
    let verdict: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(verdict["linearizable"], true);

    let ce = dir.path().join("ce");
    assert!(abcc(&["counterexample", "uniform", "--trace-dir", ce.to_str().unwrap()]).status.success());
    let out = abcc(&["check", ce.join("uniform.jsonl").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("StaleRead"));
    assert_eq!(abcc(&["check", ce.join("abcc-control.jsonl").to_str().unwrap()]).status.code(), Some(0));
}

#[test]
fn infeasible_parameters_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("p.json");
    std::fs::write(&file, r#"{"alpha": 0.05, "f": 1, "ns_min": 190, "gamma": 0.79, "beta": 0.80}"#).unwrap();
    let out = abcc(&["params", "check", file.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("FAILED") && text.ends_with("infeasible\n"));
}

#[test]
fn table_lists_every_row() {
    let out = abcc(&["params", "table"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("19 rows"));
    assert_eq!(text.lines().count(), 21);
}

#[test]
fn malformed_inputs_are_errors_not_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = \"x\"\n").unwrap();
    assert_eq!(abcc(&["sim", "run", bad.to_str().unwrap()]).status.code(), Some(3));
    let trace = dir.path().join("t.jsonl");
    std::fs::write(&trace, "{}\n").unwrap();
    assert_eq!(abcc(&["check", trace.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn overrides_apply_to_the_batch() {
    let out = abcc(&["sim", "run", "--json", "--seed", "100", "--repeat", "2", &scenario("silent-small.json")]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let seeds: Vec<u64> = report["runs"].as_array().unwrap().iter().map(|r| r["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds, [100, 101]);
}
