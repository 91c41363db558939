use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fiducial_ekf::cli::{EvalSummary, RunConfig};
use fiducial_ekf::sim::preset;
use tempfile::TempDir;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fiducial-ekf")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = bin(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

/// simulate, run and eval into `root/{sim,run}`; returns the eval exit code.
fn pipeline(root: &Path, preset: &str, seed: u64) -> i32 {
    let seed = seed.to_string();
    ok(&["simulate", "--preset", preset, "--seed", &seed, "--out", &p(root, "sim")]);
    ok(&["run", "--log", &p(root, "sim/log.jsonl"), "--config", &p(root, "sim/config.json"), "--out", &p(root, "run")]);
    bin(&["eval", "--run", &p(root, "run"), "--truth", &p(root, "sim")]).status.code().unwrap()
}

fn read_eval(dir: &Path) -> EvalSummary {
    serde_json::from_str(&fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap()
}

#[test]
fn simulate_writes_three_files_and_is_repeatable() {
    let dir = TempDir::new().unwrap();
    ok(&["simulate", "--preset", "table", "--seed", "7", "--out", &p(dir.path(), "a")]);
    ok(&["simulate", "--preset", "table", "--seed", "7", "--out", &p(dir.path(), "b")]);
    let mut names: Vec<_> = fs::read_dir(dir.path().join("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names, ["config.json", "log.jsonl", "truth.csv"]);
    for f in ["config.json", "log.jsonl", "truth.csv"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    let cfg = RunConfig::load(&dir.path().join("a/config.json")).unwrap();
    assert_eq!(cfg.scenario.unwrap().id, "table-seed7");
    assert_eq!(cfg.seed, 7);
}

#[test]
fn invalid_preset_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = bin(&["simulate", "--preset", "kitchen", "--out", &p(dir.path(), "x")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kitchen"));
    assert_eq!(bin(&["simulate"]).status.code(), Some(1));
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
    let help = String::from_utf8(bin(&["--help"]).stdout).unwrap();
    assert!(help.contains("w, x, y, z") || help.contains("w,x,y,z"));
}

#[test]
fn table_round_trip_passes_its_thresholds() {
    let dir = TempDir::new().unwrap();
    assert_eq!(pipeline(dir.path(), "table", 3), 0);
    let run = dir.path().join("run");
    for f in ["states.csv", "tags.csv", "summary.json", "timing.json", "metrics.csv", "metrics.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let eval = read_eval(&run);
    assert!(eval.passed);
    assert!(eval.loop_closure.is_none());
    let m = |n: &str| eval.metrics.iter().find(|m| m.name == n).unwrap_or_else(|| panic!("{n}")).clone();
    assert_eq!(m("tag_distance_error_final").pass, Some(true));
    assert_eq!(m("tag_rotation_error_final").pass, Some(true));
    assert_eq!(m("position_rmse").pass, Some(true));
    let timing: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("timing.json")).unwrap()).unwrap();
    assert!(timing["mean_event_ms"].as_f64().unwrap() > 0.0);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["tag_ids"].as_array().unwrap().len(), 3);
    assert!(summary["final_state"]["extrinsics"].is_object());
}

#[test]
fn pipeline_is_byte_identical_across_invocations() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(pipeline(&a, "dataset_1", 11), pipeline(&b, "dataset_1", 11));
    for f in ["sim/log.jsonl", "sim/truth.csv", "sim/config.json", "run/states.csv", "run/tags.csv", "run/summary.json", "run/metrics.csv", "run/metrics.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn loop_preset_reports_loop_closure() {
    let dir = TempDir::new().unwrap();
    assert_eq!(pipeline(dir.path(), "loop", 0), 0);
    let eval = read_eval(&dir.path().join("run"));
    let report = eval.loop_closure.expect("loop closure detected");
    assert!(report.reference_is_single_frame);
    assert!(eval.metrics.iter().any(|m| m.name == "loop_relative_error"));
}

#[test]
fn scenario_files_are_accepted() {
    let dir = TempDir::new().unwrap();
    let scenario = preset("table").unwrap().with_duration(5.0);
    let path = dir.path().join("scenario.json");
    fs::write(&path, serde_json::to_string(&scenario).unwrap()).unwrap();
    ok(&["simulate", "--scenario", path.to_str().unwrap(), "--out", &p(dir.path(), "sim")]);
    let log = fs::read_to_string(dir.path().join("sim/log.jsonl")).unwrap();
    assert!(log.lines().count() > 1000);
    let out = bin(&["simulate", "--scenario", path.to_str().unwrap(), "--preset", "table", "--out", &p(dir.path(), "x")]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn empty_log_gives_empty_outputs() {
    let dir = TempDir::new().unwrap();
    ok(&["simulate", "--preset", "table", "--out", &p(dir.path(), "sim")]);
    fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    ok(&["run", "--log", &p(dir.path(), "empty.jsonl"), "--config", &p(dir.path(), "sim/config.json"), "--out", &p(dir.path(), "run")]);
    for f in ["states.csv", "tags.csv"] {
        let text = fs::read_to_string(dir.path().join("run").join(f)).unwrap();
        assert_eq!(text.lines().count(), 1, "{f} has only a header");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["events"], 0);
    assert_eq!(summary["initialized"], false);
}

#[test]
fn corrupted_line_is_cited() {
    let dir = TempDir::new().unwrap();
    ok(&["simulate", "--preset", "table", "--out", &p(dir.path(), "sim")]);
    let log = fs::read_to_string(dir.path().join("sim/log.jsonl")).unwrap();
    let mut lines: Vec<&str> = log.lines().collect();
    lines[41] = "{\"type\":\"imu\",\"t\":";
    fs::write(dir.path().join("bad.jsonl"), lines.join("\n")).unwrap();
    let out = bin(&["run", "--log", &p(dir.path(), "bad.jsonl"), "--config", &p(dir.path(), "sim/config.json"), "--out", &p(dir.path(), "run")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 42"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn mismatched_scenarios_are_an_error() {
    let dir = TempDir::new().unwrap();
    ok(&["simulate", "--preset", "table", "--seed", "1", "--out", &p(dir.path(), "a")]);
    ok(&["simulate", "--preset", "table", "--seed", "2", "--out", &p(dir.path(), "b")]);
    fs::write(dir.path().join("short.jsonl"), "").unwrap();
    ok(&["run", "--log", &p(dir.path(), "short.jsonl"), "--config", &p(dir.path(), "a/config.json"), "--out", &p(dir.path(), "run")]);
    let out = bin(&["eval", "--run", &p(dir.path(), "run"), "--truth", &p(dir.path(), "b")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("table-seed2"));
    let missing = bin(&["eval", "--run", &p(dir.path(), "nowhere"), "--truth", &p(dir.path(), "b")]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn threshold_failure_exits_with_3() {
    let dir = TempDir::new().unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--preset", "table", "--out", &p(dir.path(), "sim")]);
    let mut cfg = RunConfig::load(&sim.join("config.json")).unwrap();
    cfg.thresholds.tag_distance = Some(1e-9);
    cfg.save(&sim.join("config.json")).unwrap();
    ok(&["run", "--log", &p(dir.path(), "sim/log.jsonl"), "--config", &p(dir.path(), "sim/config.json"), "--out", &p(dir.path(), "run")]);
    let out = bin(&["eval", "--run", &p(dir.path(), "run"), "--truth", &p(dir.path(), "sim"), "--out", &p(dir.path(), "eval")]);
    assert_eq!(out.status.code(), Some(3));
    let eval = read_eval(&dir.path().join("eval"));
    assert!(!eval.passed);
}
