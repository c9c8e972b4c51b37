use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const FAST_CONFIG: &str = r#"{
  "dataset": "data/study.json",
  "output_dir": "out",
  "seed": 11,
  "synth": { "rows": 10, "inputs": 3 },
  "inputs": { "am": { "iterations": 5000, "non_adaptive": 500, "thinning": 10 } },
  "prior": { "theta_am": { "iterations": 3000, "non_adaptive": 300, "thinning": 10 } },
  "pf": { "outer": 60, "inner": 40 }
}
"#;

fn workspace(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("relgp.json"), config).unwrap();
    dir
}

fn relgp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relgp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = relgp(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn stage_without_upstream_artifact_names_the_missing_dependency() {
    let ws = workspace(FAST_CONFIG);
    ok(ws.path(), &["synth"]);
    ok(ws.path(), &["fit-inputs"]);
    let out = relgp(ws.path(), &["simulate-pf"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("fit-gp"), "{err}");
}

#[test]
fn unchanged_rerun_is_up_to_date_and_changes_rerun_only_downstream() {
    let ws = workspace(FAST_CONFIG);
    ok(ws.path(), &["synth"]);
    let first = ok(ws.path(), &["all"]);
    assert_eq!(first.lines().filter(|l| l.ends_with(": done")).count(), 6, "{first}");
    let second = ok(ws.path(), &["all"]);
    assert_eq!(second.lines().filter(|l| l.ends_with(": up to date")).count(), 6, "{second}");

    let edited = FAST_CONFIG.replace(r#""outer": 60"#, r#""outer": 70"#);
    std::fs::write(ws.path().join("relgp.json"), edited).unwrap();
    let third = ok(ws.path(), &["all"]);
    for stage in ["fit-inputs", "tune-lambda", "fit-gp", "tune-prior"] {
        assert!(third.contains(&format!("{stage}: up to date")), "{third}");
    }
    assert!(third.contains("simulate-pf: done") && third.contains("report: done"), "{third}");
}

#[test]
fn tampered_artifact_forces_a_rerun() {
    let ws = workspace(FAST_CONFIG);
    ok(ws.path(), &["synth"]);
    ok(ws.path(), &["fit-inputs"]);
    let path = ws.path().join("out/fit-inputs/summary.json");
    std::fs::write(&path, "[]").unwrap();
    assert!(ok(ws.path(), &["fit-inputs"]).contains("fit-inputs: done"));
}

#[test]
fn configuration_problems_exit_with_code_two() {
    let ws = workspace(FAST_CONFIG);
    assert_eq!(relgp(ws.path(), &["--config", "absent.json", "fit-inputs"]).status.code(), Some(2));

    std::fs::write(ws.path().join("unknown.json"), r#"{ "dataset": "d.json", "seed": 1, "colour": "red" }"#).unwrap();
    assert_eq!(relgp(ws.path(), &["--config", "unknown.json", "fit-inputs"]).status.code(), Some(2));

    std::fs::write(ws.path().join("seedless.json"), r#"{ "dataset": "d.json" }"#).unwrap();
    let out = relgp(ws.path(), &["--config", "seedless.json", "fit-inputs"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));

    assert_eq!(relgp(ws.path(), &["fit-inputs"]).status.code(), Some(2), "dataset not generated yet");
    ok(ws.path(), &["synth"]);
    assert_eq!(relgp(ws.path(), &["--jobs", "0", "fit-inputs"]).status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_code_three() {
    let ws = workspace(FAST_CONFIG);
    ok(ws.path(), &["synth"]);
    let constant = "peak_accel_g\n".to_string() + &"2500\n".repeat(10);
    std::fs::write(ws.path().join("data/outputs.csv"), constant).unwrap();
    ok(ws.path(), &["tune-lambda"]);
    let out = relgp(ws.path(), &["fit-gp"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fit-gp"));
}

#[test]
fn report_files_follow_the_artifacts() {
    let ws = workspace(FAST_CONFIG);
    ok(ws.path(), &["synth"]);
    ok(ws.path(), &["all"]);
    let report = ws.path().join("out/report-B");
    for name in ["observed_vs_expected_reml.csv", "observed_vs_expected_bayes.csv"] {
        let text = std::fs::read_to_string(report.join(name)).unwrap();
        assert_eq!(text.lines().count(), 1 + 10, "{name}");
    }
    let posteriors = std::fs::read_to_string(report.join("input_posteriors.csv")).unwrap();
    assert_eq!(posteriors.lines().count(), 1 + 3 * 2);
    let theta = std::fs::read_to_string(report.join("theta_comparison.csv")).unwrap();
    assert_eq!(theta.lines().count(), 1 + 3);

    let simulated = read_json(&ws.path().join("out/simulate-pf-B/summary.json"));
    let reported = read_json(&report.join("pf_summary.json"));
    assert_eq!(simulated["summary"], reported["summary"]);

    let hist = std::fs::read_to_string(report.join("pf_histogram.csv")).unwrap();
    let total: usize = hist.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 60);
}

#[test]
fn settings_differ_only_in_the_range_parameter_source() {
    let ws = workspace(FAST_CONFIG);
    ok(ws.path(), &["synth"]);
    ok(ws.path(), &["all"]);
    let upstream = ["fit-inputs", "tune-lambda", "fit-gp", "tune-prior"];
    let before: Vec<String> =
        upstream.iter().map(|s| std::fs::read_to_string(ws.path().join("out").join(s).join("manifest.json")).unwrap()).collect();
    let out = ok(ws.path(), &["--setting", "A", "all"]);
    for s in upstream {
        assert!(out.contains(&format!("{s}: up to date")), "{out}");
    }
    let after: Vec<String> =
        upstream.iter().map(|s| std::fs::read_to_string(ws.path().join("out").join(s).join("manifest.json")).unwrap()).collect();
    assert_eq!(before, after);

    let a = read_json(&ws.path().join("out/simulate-pf-A/manifest.json"));
    let b = read_json(&ws.path().join("out/simulate-pf-B/manifest.json"));
    assert_eq!(a["upstream"]["fit-inputs"], b["upstream"]["fit-inputs"]);
    assert_eq!(a["upstream"]["fit-gp"], b["upstream"]["fit-gp"]);
    assert_ne!(a["key"], b["key"]);
    assert_eq!(read_json(&ws.path().join("out/report-A/pf_summary.json"))["setting"], "A");
}

#[test]
fn seed_flag_overrides_the_config() {
    let ws = workspace(FAST_CONFIG);
    ok(ws.path(), &["synth"]);
    ok(ws.path(), &["fit-inputs"]);
    let chain = ws.path().join("out/fit-inputs/X0001_jeffreys.csv");
    let with_config_seed = std::fs::read(&chain).unwrap();
    assert!(ok(ws.path(), &["--seed", "12", "fit-inputs"]).contains("fit-inputs: done"));
    assert_ne!(std::fs::read(&chain).unwrap(), with_config_seed);
    assert!(ok(ws.path(), &["fit-inputs"]).contains("fit-inputs: done"));
    assert_eq!(std::fs::read(&chain).unwrap(), with_config_seed);
}
