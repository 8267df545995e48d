use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kore_core::model::load_checkpoint;
use kore_core::trainer::read_examples;
use kore_core::Matrix;

fn kore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kore")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = kore(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn help_and_usage_errors() {
    let help = kore(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8_lossy(&help.stdout);
    for sub in ["capture", "init-adapter", "train", "cosvd", "augment", "eval"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    let bad = kore(&["frobnicate"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("Usage"));
    assert_eq!(kore(&["capture", "--bogus"]).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let out = kore(&["capture", "--checkpoint", p(&missing), "--data", p(&missing), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"seed": 1, "paths": {"data": "/not/there"}}"#).unwrap();
    assert_eq!(kore(&["--config", p(&cfg), "demo", "--out", p(dir.path())]).status.code(), Some(1));
    fs::write(&cfg, r#"{"paths": {}}"#).unwrap();
    assert_eq!(kore(&["--config", p(&cfg), "demo", "--out", p(dir.path())]).status.code(), Some(1));
}

fn predict_all(ckpt: &Path, data: &Path) -> Matrix {
    let model = load_checkpoint(ckpt).unwrap();
    let ex = read_examples(data).unwrap();
    let cols: Vec<&[f64]> = ex.iter().map(|e| e.input.as_slice()).collect();
    model.predict(&Matrix::from_columns(&cols).unwrap()).unwrap()
}

#[test]
fn demo_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s);
    ok(&["--seed", "4", "demo", "--out", p(&d("demo"))]);
    ok(&["capture", "--checkpoint", p(&d("demo/checkpoint")), "--data", p(&d("demo/capture.jsonl")), "--out", p(&d("cov"))]);
    assert!(d("cov/enc.cov").exists() && d("cov/head.cov").exists());
    ok(&[
        "init-adapter", "--cov-dir", p(&d("cov")), "--checkpoint", p(&d("demo/checkpoint")),
        "--rank", "2", "--out", p(&d("adapted")),
    ]);
    assert_eq!(json(&d("adapted/theorems.json"))["pass"], true);
    ok(&[
        "--config", p(&d("demo/train_config.json")), "train", "--checkpoint", p(&d("adapted")),
        "--data", p(&d("demo/train.jsonl")), "--out", p(&d("trained")),
    ]);
    let history = fs::read_to_string(d("trained/history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 50 * 3);

    let before = predict_all(&d("demo/checkpoint"), &d("demo/eval_old.jsonl"));
    let after = predict_all(&d("trained"), &d("demo/eval_old.jsonl"));
    let drift = after.sub(&before).unwrap().frobenius() / before.frobenius();
    assert!(drift <= 1e-8, "old-input drift {drift:e}");
    let new_before = predict_all(&d("demo/checkpoint"), &d("demo/eval_new.jsonl"));
    let new_after = predict_all(&d("trained"), &d("demo/eval_new.jsonl"));
    assert!(new_after.sub(&new_before).unwrap().frobenius() > 1e-3);

    ok(&[
        "cosvd", "--checkpoint", p(&d("demo/checkpoint")), "--cov-dir", p(&d("cov")), "--k", "1,2",
        "--eval", &format!("old={}", p(&d("demo/eval_old.jsonl"))), "--out", p(&d("rep/report.json")),
    ]);
    let report = json(&d("rep/report.json"));
    assert_eq!(report["rows"].as_array().unwrap().len(), 6);
    assert_eq!(fs::read_to_string(d("rep/enc.heat.csv")).unwrap().lines().count(), 32);

    ok(&["augment", "--knowledge", p(&d("demo/knowledge.jsonl")), "--out", p(&d("aug"))]);
    assert_eq!(json(&d("aug/augment_report.json"))["by_task"]["vqa"], 100);

    ok(&["eval", "--pred", p(&d("demo/pred.jsonl")), "--gold", p(&d("demo/gold.jsonl")), "--out", p(&d("m/metrics.json"))]);
    let m = json(&d("m/metrics.json"));
    assert_eq!(m["cem"], 75.0);
    assert_eq!(m["items"].as_array().unwrap().len(), 4);

    for out in ["demo", "cov", "adapted", "trained", "rep", "aug", "m"] {
        let cfg = json(&d(out).join("run_config.json"));
        assert!(cfg["paths"]["out"].is_string(), "{out}");
    }
    assert_eq!(json(&d("demo/run_config.json"))["seed"], 4);
    assert_eq!(json(&d("trained/run_config.json"))["train"]["epochs"], 50);
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let root = dir.path().join(tag);
        let r = |s: &str| root.join(s);
        ok(&["--seed", "9", "demo", "--out", p(&r("demo"))]);
        ok(&["capture", "--checkpoint", p(&r("demo/checkpoint")), "--data", p(&r("demo/capture.jsonl")), "--out", p(&r("cov"))]);
        ok(&["init-adapter", "--cov-dir", p(&r("cov")), "--checkpoint", p(&r("demo/checkpoint")), "--rank", "2", "--out", p(&r("ad"))]);
        ok(&[
            "--seed", "9", "train", "--checkpoint", p(&r("ad")), "--data", p(&r("demo/train.jsonl")),
            "--lr", "0.05", "--epochs", "5", "--out", p(&r("tr")),
        ]);
        ok(&["--seed", "9", "augment", "--knowledge", p(&r("demo/knowledge.jsonl")), "--out", p(&r("aug"))]);
        ["cov/enc.cov", "tr/head.b", "tr/history.jsonl", "aug/dataset.jsonl"].map(|f| fs::read(r(f)).unwrap())
    };
    assert!(run("a") == run("b"));
}

#[test]
fn augment_respects_task_selection_and_stub_dir() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s);
    ok(&["demo", "--out", p(&d("demo"))]);
    ok(&["augment", "--knowledge", p(&d("demo/knowledge.jsonl")), "--tasks", "recognition,caption", "--out", p(&d("a"))]);
    let rep = json(&d("a/augment_report.json"));
    assert_eq!(rep["samples"], 40);
    assert!(rep["by_task"].get("vqa").is_none());

    // An empty canned-response directory without fallback skips the generated tasks.
    fs::create_dir(d("canned")).unwrap();
    ok(&["augment", "--knowledge", p(&d("demo/knowledge.jsonl")), "--stub-dir", p(&d("canned")), "--out", p(&d("b"))]);
    let rep = json(&d("b/augment_report.json"));
    assert_eq!(rep["by_task"]["recognition"], 20);
    assert!(rep["by_task"].get("dialogue").is_none());
    assert!(!rep["skipped"].as_array().unwrap().is_empty());
}
