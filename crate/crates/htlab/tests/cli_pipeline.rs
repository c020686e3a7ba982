//! End-to-end driver tests on the ten-gate smoke design.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_htlab")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn htlab")
}

fn assert_ok(dir: &Path, args: &[&str]) -> String {
    let out = run_in(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Exercises every stage quickly: a coarse rareness threshold yields a
/// handful of rare nets, width-2 triggers keep episodes short, and a single
/// characterization pass leaves some compatible pairs uncovered so every
/// corpus generator has something to find.
const SMOKE_CONFIG: &str = r#"
design = "toy"
output_dir = "out"
theta = 0.3
t_wid = 2
t_iterations = 1
probability_patterns = 4096
seed_patterns = 64
corpus_size = 3
random_max_draws = 50000
evade_max_draws = 100000

[train]
max_timesteps = 1500

[detect]
pattern_budget = 64
population = 12
generations = 5
budget_overrides = { RANDOM = 4, MAXSENSE = 16 }
"#;

fn setup(dir: &Path) -> PathBuf {
    let config = dir.join("run.toml");
    std::fs::write(&config, SMOKE_CONFIG).unwrap();
    config
}

fn err_kind(out: &Output) -> (i32, String) {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap_or_default();
    let json: serde_json::Value =
        serde_json::from_str(line).unwrap_or_else(|_| panic!("not JSON: {stderr}"));
    (
        out.status.code().unwrap_or(-1),
        json["error"].as_str().unwrap_or_default().to_string(),
    )
}

#[test]
fn toy_pipeline_end_to_end_under_a_minute() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path());
    let started = Instant::now();
    let stages: &[&[&str]] = &[
        &["gen-design"],
        &["rare-nets"],
        &["characterize"],
        &["train"],
        &["gen-ht", "rl"],
        &["gen-ht", "random"],
        &["gen-ht", "minus-rl"],
        &["detect", "random"],
        &["detect", "tarmac"],
        &["detect", "maxsense"],
        &["gen-ht", "evade", "--against", "random"],
        &["insert"],
        &["evaluate"],
        &["report"],
        &["export-cnf"],
    ];
    for args in stages {
        assert_ok(tmp.path(), args);
    }
    assert!(
        started.elapsed().as_secs() < 60,
        "pipeline took {:?}",
        started.elapsed()
    );

    let out = tmp.path().join("out");
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("TARMAC"), "report:\n{report}");
    assert!(report.contains("COMBINED"), "report:\n{report}");
    for corpus in ["rl", "random", "minus_rl", "evade"] {
        let eval = std::fs::read_to_string(out.join(format!("eval_{corpus}.json"))).unwrap();
        let json: serde_json::Value = serde_json::from_str(&eval).unwrap();
        assert_eq!(json["corpus"], corpus);
        assert!(!json["ht_names"].as_array().unwrap().is_empty());
    }
    let cnf = std::fs::read_to_string(out.join("design.cnf")).unwrap();
    assert!(cnf.contains("p cnf "), "dimacs header missing");

    // A second evaluate and report reproduce byte-identical artifacts.
    let report_before = std::fs::read(out.join("report.txt")).unwrap();
    assert_ok(tmp.path(), &["report"]);
    assert_eq!(std::fs::read(out.join("report.txt")).unwrap(), report_before);
}

#[test]
fn detect_without_rare_nets_is_missing_prerequisite() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path());
    assert_ok(tmp.path(), &["gen-design"]);
    let out = run_in(tmp.path(), &["detect", "tarmac"]);
    let (code, kind) = err_kind(&out);
    assert_eq!(code, 3, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(kind, "missing_prerequisite");
}

#[test]
fn characterize_rerun_is_cache_hit_with_identical_output() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path());
    for args in [&["gen-design"][..], &["rare-nets"], &["characterize"]] {
        assert_ok(tmp.path(), args);
    }
    let path = tmp.path().join("out/charact.json");
    let before = std::fs::read(&path).unwrap();
    let stdout = assert_ok(tmp.path(), &["characterize"]);
    assert!(stdout.contains("cache hit"), "stdout: {stdout}");
    assert_eq!(std::fs::read(&path).unwrap(), before);
}

#[test]
fn tampered_prerequisite_is_hash_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path());
    assert_ok(tmp.path(), &["gen-design"]);
    assert_ok(tmp.path(), &["rare-nets"]);
    let rare = tmp.path().join("out/rare_nets.txt");
    let mut text = std::fs::read_to_string(&rare).unwrap();
    text.push_str("n5 1 0.01\n");
    std::fs::write(&rare, text).unwrap();
    let out = run_in(tmp.path(), &["characterize"]);
    let (code, kind) = err_kind(&out);
    assert_eq!(code, 4, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(kind, "hash_mismatch");
}

#[test]
fn config_change_marks_upstream_artifacts_stale() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path());
    assert_ok(tmp.path(), &["gen-design"]);
    assert_ok(tmp.path(), &["rare-nets"]);
    let out = run_in(tmp.path(), &["--set", "theta=0.2", "characterize"]);
    let (code, kind) = err_kind(&out);
    assert_eq!(code, 4, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(kind, "hash_mismatch");
}

#[test]
fn schema_violation_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("run.toml"), "design = \"toy\"\nthetaa = 1\n").unwrap();
    let out = run_in(tmp.path(), &["gen-design"]);
    let (code, kind) = err_kind(&out);
    assert_eq!(code, 2);
    assert_eq!(kind, "config");
}

#[test]
fn invalid_worker_override_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path());
    let out = Command::new(bin())
        .current_dir(tmp.path())
        .env("HTLAB_WORKERS", "three")
        .args(["gen-design"])
        .output()
        .unwrap();
    let (code, kind) = err_kind(&out);
    assert_eq!(code, 2);
    assert_eq!(kind, "config");
}

#[test]
fn worker_override_is_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path());
    let out = Command::new(bin())
        .current_dir(tmp.path())
        .env("HTLAB_WORKERS", "2")
        .args(["gen-design"])
        .output()
        .unwrap();
    assert!(out.status.success());
}

#[test]
fn unknown_technique_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path());
    assert_ok(tmp.path(), &["gen-design"]);
    assert_ok(tmp.path(), &["rare-nets"]);
    let out = run_in(tmp.path(), &["detect", "nosuch"]);
    let (code, kind) = err_kind(&out);
    assert_eq!(code, 2);
    assert_eq!(kind, "config");
}
