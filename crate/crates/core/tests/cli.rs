use std::path::Path;
use std::process::{Command, Output};

use bilateral_trade::harness::trace::HEADER;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bilateral-trade"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

const SMALL: &str = "T = 300\nd = 2\nalgorithm = eoc\nmarket.noise = uniform\nmarket.C = 0.25\n\
                     schedule.eps = 0.25\nschedule.mu = 1\nschedule.t_int = 40\nschedule.t_fd = 2\n";

#[test]
fn run_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.cfg", SMALL);
    let out_dir = dir.path().join("out");
    let out = bin().args(["run", "--config"]).arg(&cfg).args(["--seed", "9", "--out"]).arg(&out_dir).output().unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let trace = std::fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some(HEADER));
    assert_eq!(trace.lines().count(), 301);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 9);
    assert_eq!(summary["horizon"], 300);
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.cfg", &format!("{SMALL}market.colour = blue\n"));
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("market.colour"));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let out = bin().args(["run", "--config", "/nonexistent/btrade.cfg"]).output().unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn malformed_value_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.cfg", &SMALL.replace("schedule.t_int = 40", "schedule.t_int = forty"));
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("schedule.t_int"));
}

#[test]
fn unknown_verify_suite_is_rejected() {
    let out = bin().args(["verify", "everything"]).output().unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn verify_suite_reports_pass_lines() {
    let out = bin().args(["verify", "appendix-e"]).output().unwrap();
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 3, "{stdout}");
}

#[test]
fn sweep_honours_worker_count_and_writes_merged_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sweep.cfg", "T = 10\nd = 1\nalgorithm = fixed\nfixed.price = 0.3\nmarket.noise = uniform\nmarket.C = 0.2\n");
    let out_dir = dir.path().join("sw");
    let out = bin()
        .env("BTRADE_WORKERS", "2")
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--horizons", "100,200,400", "--reps", "2", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("2 workers"));
    let merged: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(merged["points"].as_array().unwrap().len(), 3);
    assert_eq!(merged["runs_completed"], 6);
    assert!(out_dir.join("T400/rep1/summary.json").exists());
}

#[test]
fn sweep_needs_three_horizons() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sweep.cfg", "T = 10\nd = 1\nalgorithm = fixed\n");
    let out = bin().args(["sweep", "--config"]).arg(&cfg).args(["--horizons", "100,200"]).output().unwrap();
    assert_eq!(code(&out), 2);
}
