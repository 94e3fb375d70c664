//! End-to-end runs of the `verify` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn verify(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_verify")).args(args).output().expect("spawn verify")
}

fn config(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

fn report(dir: &Path, suite: &str) -> Value {
    let text = std::fs::read_to_string(dir.join(format!("{suite}.report.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn unknown_suite_is_rejected() {
    let out = verify(&["bogus", "--config", &config("linalg.json")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown suite"));
}

#[test]
fn mismatched_config_is_rejected() {
    let out = verify(&["jaffard", "--config", &config("linalg.json")]);
    assert!(!out.status.success());
}

#[test]
fn missing_config_is_rejected() {
    let out = verify(&["linalg", "--config", "/nonexistent/config.json"]);
    assert!(!out.status.success());
}

#[test]
fn law_comparison_below_minimum_sample_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = verify(&[
        "uniqueness",
        "--config",
        &config("uniqueness.json"),
        "--samples",
        "50",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("50") && err.contains("100"), "{err}");
}

#[test]
fn linalg_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = verify(&["linalg", "--config", &config("linalg.json"), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let r = report(dir.path(), "linalg");
    assert_eq!(r["suite"], "linalg");
    assert_eq!(r["fail"], 0);
    for c in r["checks"].as_array().unwrap() {
        assert_eq!(c["status"], "PASS", "{}", c["check_id"]);
        assert!(c["anchor"].as_str().is_some_and(|a| !a.is_empty()));
    }
    assert!(dir.path().join("linalg_margins.csv").exists());
}

#[test]
fn reports_reproduce_except_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str| {
        let out = verify(&["jaffard", "--config", &config("jaffard.json"), "--seed", seed, "--out", dir.path().to_str().unwrap()]);
        assert!(out.status.success());
        let mut r = report(dir.path(), "jaffard");
        r.as_object_mut().unwrap().remove("timestamp");
        (r, std::fs::read(dir.path().join("jaffard_fits.csv")).unwrap())
    };
    let (a, fa) = run("7");
    let (b, fb) = run("7");
    assert_eq!(a, b);
    assert_eq!(fa, fb);
}

#[test]
fn monte_carlo_reports_reproduce() {
    let dir = tempfile::tempdir().unwrap();
    let run = || {
        let out = verify(&["kernel_mass", "--config", &config("kernel_mass.json"), "--samples", "10000", "--out", dir.path().to_str().unwrap()]);
        assert!(out.status.success() || out.status.code() == Some(1));
        let mut r = report(dir.path(), "kernel_mass");
        r.as_object_mut().unwrap().remove("timestamp");
        r
    };
    assert_eq!(run(), run());
}

#[test]
fn half_qv_convention_is_self_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let out = verify(&[
        "simulator",
        "--config",
        &config("simulator.json"),
        "--samples",
        "400",
        "--half-qv-convention",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let r = report(dir.path(), "simulator");
    assert_eq!(r["config"]["half_qv"], true);
    for c in r["checks"].as_array().unwrap() {
        assert_eq!(c["status"], "PASS", "{c}");
    }
    assert!(out.status.success());
}
