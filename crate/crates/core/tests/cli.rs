use std::path::Path;
use std::process::Command;

use learn2pfed::cli::run_cli;
use learn2pfed::metrics::read_csv;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("learn2pfed").chain(args.iter().copied());
    let code = run_cli(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gradcheck_passes() {
    let (code, out, _) = run(&["gradcheck", "--seed", "3"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.trim_end().ends_with("PASS"));
    assert!(out.contains("max relative error"));
}

#[test]
fn missing_config_is_a_usage_error() {
    let (code, _, err) = run(&["run", "--config", "/definitely/not/here.toml"]);
    assert_eq!(code, 2);
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error: "));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[experiment]\nrouns = 3\n").unwrap();
    let (code, _, err) = run(&["run", "--config", path(&cfg)]);
    assert_eq!(code, 2);
    assert!(err.contains("rouns"), "{err}");
}

#[test]
fn invalid_arguments_are_usage_errors() {
    assert_eq!(run(&["run", "--setting", "7"]).0, 2);
    assert_eq!(run(&["run", "--method", "sgd_magic"]).0, 2);
    assert_eq!(run(&["run", "--method", "local,fedavg"]).0, 2);
    assert_eq!(run(&["frobnicate"]).0, 2);
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_learn2pfed");
    let status = Command::new(bin)
        .args(["run", "--config", "/nope.toml"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    let ok = Command::new(bin).args(["gradcheck", "--layers", "2"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
}

#[test]
fn run_writes_one_row_per_round() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("res");
    let (code, out, err) = run(&[
        "run", "--method", "learn2pfed", "--rounds", "4", "--layers", "3", "--out", path(&out_dir),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("learn2pfed"));
    let rows = read_csv(&out_dir.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows.iter().map(|r| r.round).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    assert!(rows.iter().all(|r| r.client.is_none() && r.wall_ms == 0 && !r.diverged));
    assert!(rows.iter().all(|r| r.lagrangian_final_cell.is_some()));
}

#[test]
fn compare_prints_a_row_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("res");
    let (code, out, err) = run(&[
        "compare", "--rounds", "3", "--layers", "2", "--trials", "2", "--out", path(&out_dir),
    ]);
    assert_eq!(code, 0, "{err}");
    for m in ["learn2pfed", "local", "fedavg", "fedprox", "fedavg_ft", "fedprox_ft", "ditto"] {
        assert!(out.lines().any(|l| l.split_whitespace().next() == Some(m)), "{m} missing:\n{out}");
    }
    let rows = read_csv(&out_dir.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 7 * 2 * 3);
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 8);

    let (code, report, _) = run(&["report", "--metrics", path(&out_dir)]);
    assert_eq!(code, 0);
    assert_eq!(report.lines().count(), 8);
    assert!(report.contains("lagrangian_drop"));
}

#[test]
fn transcript_and_diagnostics_files() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("res");
    let (code, _, err) = run(&[
        "run", "--rounds", "2", "--layers", "3", "--transcript", "--diagnostics", "--out", path(&out_dir),
    ]);
    assert_eq!(code, 0, "{err}");
    let transcript = std::fs::read_to_string(out_dir.join("transcript_learn2pfed_trial0.txt")).unwrap();
    // 2 rounds x 2 passes x (30 uploads + 3 broadcasts + 10 reports + 1 sum)
    assert_eq!(transcript.lines().count(), 4 * 44);
    let diag = std::fs::read_to_string(out_dir.join("diagnostics_learn2pfed_trial0.txt")).unwrap();
    assert!(diag.contains("descent:") && diag.contains("Lambda"));
}

#[test]
fn datagen_writes_shards() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("data");
    let (code, _, err) = run(&["datagen", "--setting", "2", "--out", path(&out_dir)]);
    assert_eq!(code, 0, "{err}");
    for i in 0..10 {
        assert!(out_dir.join(format!("client_{i}_train.csv")).exists());
        assert!(out_dir.join(format!("client_{i}_test.csv")).exists());
    }
    let train = std::fs::read_to_string(out_dir.join("client_0_train.csv")).unwrap();
    assert_eq!(train.lines().count(), 181);
    assert_eq!(train.lines().next().unwrap(), "x0,x1,x2,x3,y");
}

#[test]
fn report_without_metrics_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(&["report", "--metrics", path(&dir.path().join("none.csv"))]);
    assert_eq!(code, 2);
    assert!(err.starts_with("error: "));
}
