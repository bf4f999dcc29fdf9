use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn dcis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcis"))
        .args(args)
        .env("DCIS_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn value_after(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(key))
        .and_then(|rest| rest.trim().parse().ok())
        .unwrap_or_else(|| panic!("no {key} in {text}"))
}

/// A config small enough to train and search in a few seconds.
fn small_config(dir: &Path) -> PathBuf {
    let cfg = json!({
        "training": {
            "steps": 30,
            "batch_size": 4,
            "corpus": { "tokens": 6400, "holdout_tokens": 1024 }
        },
        "search": { "target_length": 128, "samples": 2 },
        "eval": { "samples": 2, "trials": 5 }
    });
    let path = dir.join("run.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn budget_prints_exact_counts() {
    let o = dcis(&[
        "budget",
        "--head-dim",
        "128",
        "--increments",
        "10",
        "--evo",
        "40",
        "64",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("dcis_evaluations 1260"), "{out}");
    assert!(out.contains("evo_evaluations 2560"), "{out}");
    assert!(out.contains("ratio 2.03"), "{out}");
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = dcis(&[
        "train",
        "--config",
        p(&missing),
        "--out",
        p(&dir.path().join("m.ckpt")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.json"), "{}", stderr(&o));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"search": {"incrments": 3}}"#).unwrap();
    let o = dcis(&[
        "train",
        "--config",
        p(&bad),
        "--out",
        p(&dir.path().join("m.ckpt")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn too_few_increments_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("m.ckpt");
    let o = dcis(&[
        "search",
        "--checkpoint",
        p(&ck),
        "--out",
        p(&dir.path().join("f.json")),
        "--increments",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("increments"), "{}", stderr(&o));
}

#[test]
fn empty_sweep_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcis(&[
        "sweep",
        "--checkpoint",
        p(&dir.path().join("m.ckpt")),
        "--param",
        "range",
        "--out",
        p(&dir.path().join("s.json")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_metric_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcis(&[
        "eval",
        "--checkpoint",
        p(&dir.path().join("m.ckpt")),
        "--metric",
        "bleu",
        "--out",
        p(&dir.path().join("r.json")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

/// Trains, searches and evaluates; returns the factors file bytes.
fn pipeline(dir: &Path) -> Vec<u8> {
    let cfg = small_config(dir);
    let ck = dir.join("m.ckpt");
    let factors = dir.join("f.json");

    let o = dcis(&["train", "--config", p(&cfg), "--out", p(&ck)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let heldout = value_after(&stdout(&o), "heldout_ppl@64");
    let log = std::fs::read_to_string(dir.join("m.ckpt.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 30);

    let o = dcis(&[
        "search",
        "--config",
        p(&cfg),
        "--checkpoint",
        p(&ck),
        "--out",
        p(&factors),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    // 8 pairs: 14 segments of 10 increments
    assert!(out.contains("total_evaluations 140"), "{out}");
    let trace = std::fs::read_to_string(dir.join("f.json.trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 14);
    let doc: Value = serde_json::from_slice(&std::fs::read(&factors).unwrap()).unwrap();
    assert_eq!(doc["provenance"], "dcis");
    assert_eq!(doc["lambdas"].as_array().unwrap().len(), 8);
    assert_eq!(doc["config"]["search"]["target_length"], 128);

    let report = dir.join("r.json");
    let o = dcis(&[
        "eval",
        "--config",
        p(&cfg),
        "--checkpoint",
        p(&ck),
        "--scheme",
        "ones",
        "--lengths",
        "128",
        "64",
        "--out",
        p(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    let entries = r["entries"].as_array().unwrap();
    assert_eq!(entries[0]["length"], 64);
    let ppl64 = entries[0]["ppl"].as_f64().unwrap();
    assert!(
        (ppl64 - heldout).abs() < 1e-5 * heldout,
        "{ppl64} vs {heldout}"
    );

    let csv = dir.join("pk.csv");
    let o = dcis(&[
        "eval",
        "--config",
        p(&cfg),
        "--checkpoint",
        p(&ck),
        "--factors",
        p(&factors),
        "--metric",
        "passkey",
        "--lengths",
        "128",
        "--out",
        p(&csv),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(
        text.lines().nth(1).unwrap().starts_with("128,recall_rate,"),
        "{text}"
    );

    std::fs::read(&factors).unwrap()
}

#[test]
fn pipeline_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(pipeline(a.path()), pipeline(b.path()));
}

#[test]
fn eval_without_enough_heldout_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let ck = dir.path().join("m.ckpt");
    let o = dcis(&[
        "train",
        "--config",
        p(&cfg),
        "--out",
        p(&ck),
        "--steps",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = dcis(&[
        "eval",
        "--config",
        p(&cfg),
        "--checkpoint",
        p(&ck),
        "--lengths",
        "4096",
        "--out",
        p(&dir.path().join("r.json")),
    ]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
}
