use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_onestream"))
        .args(args)
        .current_dir(dir)
        .env("OST_THREADS", "1")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &str = r#"
[model]
n_template = 32
n_search = 64
feat_dim = 8
heads = 2
gcn_neighbors = 8
mfa_samples = [16, 32]

[train]
steps = 4
batch = 2
checkpoint_every = 0

[synth]
n_frames = 6
"#;

#[test]
fn synth_writes_complete_sequence() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--seed", "7", "--frames", "20", "--out", "d"]);
    let seqs = onestream::data::load_dataset(&dir.path().join("d")).unwrap();
    assert_eq!(seqs.len(), 1);
    assert_eq!(seqs[0].frames.len(), 20);
    assert_eq!(seqs[0].id, "synth-car-7");
}

#[test]
fn train_track_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("small.toml"), SMALL).unwrap();
    ok(d, &["synth", "--config", "small.toml", "--seed", "3", "--count", "2", "--out", "data"]);
    ok(d, &["train", "--config", "small.toml", "--data", "data", "--out", "ck"]);
    let log = std::fs::read_to_string(d.join("ck/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 5);
    ok(d, &["track", "--checkpoint", "ck", "--data", "data", "--out", "p.jsonl"]);
    assert_eq!(std::fs::read_to_string(d.join("p.jsonl")).unwrap().lines().count(), 12);
    let stdout = ok(d, &["eval", "--preds", "p.jsonl", "--data", "data", "--out", "m.json"]);
    assert!(stdout.contains("Success") && stdout.contains("Precision"));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("m.json")).unwrap()).unwrap();
    assert_eq!(m["frames"], 10);
    assert!(m["success"].as_f64().unwrap() >= 0.0);
    ok(d, &["bench", "--checkpoint", "ck", "--forwards", "2", "--out", "cost.json"]);
    let c: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("cost.json")).unwrap()).unwrap();
    assert!(c["params"].as_u64().unwrap() > 0);
    assert!(ok(d, &["splits", "--data", "data", "--setting", "2"]).contains("train"));
}

#[test]
fn failures_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!run(dir.path(), &["frobnicate"]).status.success());
    assert!(!run(dir.path(), &["eval", "--preds", "missing.jsonl", "--data", "nowhere"]).status.success());
    assert!(!run(dir.path(), &["synth", "--bogus"]).status.success());
    let out = run(dir.path(), &["track", "--checkpoint", "nope", "--data", ".", "--out", "p.jsonl"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
