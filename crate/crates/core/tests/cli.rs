use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dphase(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dphase")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SPEC: &str = r#"{"p": 2.0, "q": 2.0, "s": 0.5, "t": 0.5, "lambda": 1.0, "delta0": 0.1, "dim": 1}"#;

#[test]
fn empty_plan_exits_zero() {
    let d = tempfile::tempdir().unwrap();
    let plan = write(d.path(), "empty.json", r#"{"jobs": []}"#);
    let out = d.path().join("out");
    let o = dphase(&["run", &plan, "--output-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read_to_string(out.join("summary.csv")).unwrap(), "job,kind,status,value\n");
}

#[test]
fn violated_regime_exits_two_naming_it() {
    let d = tempfile::tempdir().unwrap();
    let plan = write(
        d.path(),
        "bad.json",
        r#"{"jobs": [{"id": "v", "type": "validate", "assert_regime": ["self_improving"],
            "spec": {"p": 2.0, "q": 3.0, "s": 0.3, "t": 0.5, "lambda": 2.0, "delta0": 0.1, "dim": 1}}]}"#,
    );
    let o = dphase(&["validate", &plan]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("qt > ps") && err.contains("2 <= p <= q <= ps/t"), "{err}");
}

#[test]
fn parse_error_exits_two_with_location() {
    let d = tempfile::tempdir().unwrap();
    let plan = write(d.path(), "broken.json", "{\n \"jobs\": [\n  {\"id\": 3}\n]}");
    let o = dphase(&["run", &plan]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn failing_job_exits_one_with_id() {
    let d = tempfile::tempdir().unwrap();
    let text = format!(
        r#"{{"jobs": [
            {{"id": "u", "type": "solve", "spec": {SPEC}, "kernel": {{"a": {{"kind": "constant", "value": 1.0}}}},
              "grid": {{"dim": 1, "cells": 64, "half_width": 1.0}},
              "domain": {{"kind": "ball", "center": [0.0], "radius": 1.0}},
              "exterior": {{"kind": "constant", "value": 0.0}}, "forcing": {{"kind": "constant", "value": 1.0}}}},
            {{"id": "too-wide", "type": "check", "check": "caccioppoli", "solutions": ["u"], "center": [0.0], "radius": 0.5}}
        ]}}"#
    );
    let plan = write(d.path(), "fail.json", &text);
    let out = d.path().join("out");
    let o = dphase(&["run", &plan, "--output-dir", out.to_str().unwrap(), "--threads", "2"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("job too-wide") && err.contains("R <= 1/8"), "{err}");
}

#[test]
fn bundled_getoor_plan_runs() {
    let d = tempfile::tempdir().unwrap();
    let plan = Path::new(env!("CARGO_MANIFEST_DIR")).join("plans/getoor.plan");
    let o = dphase(&["run", plan.to_str().unwrap(), "--output-dir", d.path().to_str().unwrap(), "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["getoor.bin", "getoor.json", "caccioppoli.verdict.json", "holder.csv", "holder.fit.json", "summary.csv"] {
        assert!(d.path().join(f).exists(), "{f}");
    }
    let bin = fs::read(d.path().join("getoor.bin")).unwrap();
    assert_eq!(bin.len(), 8 * 513);
    let summary = fs::read_to_string(d.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 4);
    let table = String::from_utf8_lossy(&o.stdout);
    assert_eq!(table.lines().count(), 1 + 4);
}
