//! Exit codes, flag overrides and report layout of the binary.

use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn tmp(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("parabolic-cli-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parabolic")).args(args).output().expect("run parabolic")
}

#[test]
fn negative_tolerance_is_a_config_error() {
    let d = tmp("tol");
    let cfg = d.join("c.json");
    std::fs::write(&cfg, r#"{"abel_tol": -1}"#).unwrap();
    let o = run(&["fatou", "--config", cfg.to_str().unwrap(), "--out", d.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("abel_tol"));
    assert!(!d.join("report.json").exists());
}

#[test]
fn other_config_errors_exit_2() {
    let d = tmp("cfg");
    let out = d.to_str().unwrap();
    assert_eq!(run(&["renorm", "--depth", "3", "--out", out]).status.code(), Some(2));
    assert_eq!(run(&["renorm", "--depth", "0", "--out", out]).status.code(), Some(2));
    assert_eq!(run(&["brjuno", "--alpha-digits", "50,3", "--out", out]).status.code(), Some(2));
    let cfg = d.join("c.json");
    std::fs::write(&cfg, r#"{"julia_samples": 1000000}"#).unwrap();
    assert_eq!(run(&["orbits", "--config", cfg.to_str().unwrap(), "--out", out]).status.code(), Some(2));
    std::fs::write(&cfg, "{not json").unwrap();
    assert_eq!(run(&["brjuno", "--config", cfg.to_str().unwrap(), "--out", out]).status.code(), Some(2));
}

#[test]
fn brjuno_report_with_overrides() {
    let d = tmp("brjuno");
    let out = d.to_str().unwrap();
    let o = run(&["brjuno", "--alpha-digits", "60,70", "--seed", "3", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let first = std::fs::read(d.join("report.json")).unwrap();
    let r: Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(r["command"], "brjuno");
    assert_eq!(r["config"]["seed"], 3);
    assert_eq!(r["results"]["digits"][0], 60);
    assert_eq!(r["results"]["digits"][1], 70);
    assert_eq!(r["config_hash"].as_str().unwrap().len(), 64);
    // Period-two digits have no period-one closed form.
    assert!(r["checks"].as_array().unwrap().iter().all(|c| c["name"] != "brjuno.periodic_closed_form"));
    assert!(r["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
    assert!(d.join("functional_equation.csv").exists());
    run(&["brjuno", "--alpha-digits", "60,70", "--seed", "3", "--out", out]);
    assert_eq!(first, std::fs::read(d.join("report.json")).unwrap());
}

#[test]
fn orbits_exit_zero_with_soft_failures() {
    let d = tmp("orbits");
    let cfg = d.join("c.json");
    std::fs::write(&cfg, r#"{"julia_samples": 10, "orbit_steps": 2000, "pc_iterations": 20000}"#).unwrap();
    let o = run(&["orbits", "--config", cfg.to_str().unwrap(), "--out", d.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let r: Value = serde_json::from_slice(&std::fs::read(d.join("report.json")).unwrap()).unwrap();
    let soft: Vec<&Value> = r["checks"].as_array().unwrap().iter().filter(|c| c["hard"] == false).collect();
    assert_eq!(soft.len(), 2);
    let csv = std::fs::read_to_string(d.join("distances.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
}

#[test]
fn unknown_command_is_rejected() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}
