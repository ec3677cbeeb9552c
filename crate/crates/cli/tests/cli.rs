use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rhem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rhem")).args(args).output().expect("run rhem")
}

fn ok(args: &[&str]) {
    let out = rhem(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn manifest(dir: &Path, command: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(format!("{command}.manifest.json"))).unwrap()).unwrap()
}

fn simulate_small(dir: &Path, events: usize) -> String {
    let config = dir.join("synth.json");
    fs::write(
        &config,
        format!(
            r#"{{"n_authors": 3000, "n_references": 3000, "n_keywords": 500, "n_events": {events},
               "author_size": {{"min": 1, "mean": 1.5, "max": 3}},
               "reference_size": {{"min": 0, "mean": 1.0, "max": 3}},
               "keyword_size": {{"min": 0, "mean": 1.0, "max": 2}},
               "candidates_per_step": 2, "seed": 21}}"#
        ),
    )
    .unwrap();
    let sim = dir.join("sim");
    ok(&["simulate", "--config", config.to_str().unwrap(), "--out", sim.to_str().unwrap()]);
    sim.join("events.jsonl").to_str().unwrap().to_string()
}

#[test]
fn design_is_deterministic_and_fit_reports_observations() {
    let dir = tempfile::tempdir().unwrap();
    let events = simulate_small(dir.path(), 13915);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["design", "--input", &events, "--out", out.to_str().unwrap(), "--m", "10", "--seed", "7"]);
    }
    let da = fs::read(a.join("design.csv")).unwrap();
    assert_eq!(da, fs::read(b.join("design.csv")).unwrap());
    let m = manifest(&a, "design");
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config_hash"], manifest(&b, "design")["config_hash"]);

    let design = a.join("design.csv");
    let fit_dir = dir.path().join("fit");
    ok(&["fit", "--design", design.to_str().unwrap(), "--out", fit_dir.to_str().unwrap()]);
    let fm = manifest(&fit_dir, "fit");
    assert_eq!(fm["details"]["n_obs"], 153_065);
    let estimates = fs::read_to_string(fit_dir.join("estimates.tsv")).unwrap();
    assert_eq!(estimates.lines().count(), 25);
}

#[test]
fn compare_writes_four_models_and_contrib_one_row_per_effect() {
    let dir = tempfile::tempdir().unwrap();
    let events = simulate_small(dir.path(), 400);
    let d = dir.path().join("d");
    ok(&["design", "--input", &events, "--out", d.to_str().unwrap(), "--seed", "1"]);
    let design = d.join("design.csv");
    let out = dir.path().join("cmp");
    ok(&["compare", "--design", design.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let table = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].contains("delta_aic"));
    ok(&["contrib", "--design", design.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(fs::read_to_string(out.join("contributions.csv")).unwrap().lines().count(), 25);
}

#[test]
fn fit_on_an_effect_subset() {
    let dir = tempfile::tempdir().unwrap();
    let events = simulate_small(dir.path(), 300);
    let d = dir.path().join("d");
    ok(&["design", "--input", &events, "--out", d.to_str().unwrap()]);
    let design = d.join("design.csv");
    ok(&["fit", "--design", design.to_str().unwrap(), "--out", d.to_str().unwrap(), "--effects", "sub.rep.aut,closure.aut.aut.aut"]);
    assert_eq!(fs::read_to_string(d.join("estimates.tsv")).unwrap().lines().count(), 3);
    let bad = rhem(&["fit", "--design", design.to_str().unwrap(), "--out", d.to_str().unwrap(), "--effects", "no.such"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn mismatched_sidecar_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let events = simulate_small(dir.path(), 100);
    let d = dir.path().join("d");
    ok(&["design", "--input", &events, "--out", d.to_str().unwrap()]);
    let meta = d.join("design.meta.json");
    let mut v: Value = serde_json::from_str(&fs::read_to_string(&meta).unwrap()).unwrap();
    v["catalog"].as_array_mut().unwrap().reverse();
    fs::write(&meta, v.to_string()).unwrap();
    let out = rhem(&["contrib", "--design", d.join("design.csv").to_str().unwrap(), "--out", d.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exit_codes() {
    assert_eq!(rhem(&["design", "--m", "0"]).status.code(), Some(2));
    assert_eq!(rhem(&["frobnicate"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = rhem(&["validate", "--input", "/nonexistent/events.jsonl", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"t\": 2, \"authors\": [\"a\"]}\n{\"t\": 1, \"authors\": [\"b\"]}\n").unwrap();
    let out = rhem(&["validate", "--input", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    ok(&["validate", "--input", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--sort"]);
    assert_eq!(manifest(dir.path(), "validate")["details"]["n_events"], 2);
}
