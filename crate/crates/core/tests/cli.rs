use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn numex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_numex"))
        .args(args)
        .env_remove("NUMEX_SEED")
        .output()
        .expect("run numex")
}

fn ok(args: &[&str]) -> Output {
    let out = numex(args);
    assert!(
        out.status.success(),
        "numex {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

/// Small corpus plus a trained bundle, shared by several tests.
fn trained(dir: &Path) {
    ok(&["synth", "-n", "20", "--seed", "5", "-o", &p(dir, "c.jsonl")]);
    ok(&["train", "-c", &p(dir, "c.jsonl"), "-o", &p(dir, "m")]);
}

#[test]
fn synth_is_stable_and_valid() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "-n", "15", "--seed", "7", "-o", &p(d, "a.jsonl")]);
    ok(&["synth", "-n", "15", "--seed", "7", "-o", &p(d, "b.jsonl")]);
    let a = fs::read(d.join("a.jsonl")).unwrap();
    assert_eq!(a, fs::read(d.join("b.jsonl")).unwrap());
    assert_eq!(a.iter().filter(|&&b| b == b'\n').count(), 15);
    let v = ok(&["validate", &p(d, "a.jsonl")]);
    assert_eq!(String::from_utf8_lossy(&v.stdout).trim(), "ok: 15 documents");
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "-n", "4", "--seed", "11", "-o", &p(d, "flag.jsonl")]);
    let out = Command::new(env!("CARGO_BIN_EXE_numex"))
        .args(["synth", "-n", "4", "-o", &p(d, "env.jsonl")])
        .env("NUMEX_SEED", "11")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(fs::read(d.join("flag.jsonl")).unwrap(), fs::read(d.join("env.jsonl")).unwrap());
}

#[test]
fn synth_zero_writes_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "-n", "0", "-o", &p(dir.path(), "e.jsonl")]);
    assert!(fs::read(dir.path().join("e.jsonl")).unwrap().is_empty());
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(numex(&["synth"]).status.code(), Some(2));
    assert_eq!(numex(&["train", "--features", "run3", "-c", "x", "-o", "y"]).status.code(), Some(2));
    assert_eq!(numex(&["validate", "/nonexistent/file.jsonl"]).status.code(), Some(2));
}

#[test]
fn validate_rejects_bad_documents_and_unknown_fields() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bad = r#"{"id":"d1","text":"pulse 80","entities":[{"id":"T1","kind":"VAL","start":6,"end":12}],"relations":[]}"#;
    fs::write(d.join("bad.jsonl"), format!("{bad}\n")).unwrap();
    assert_eq!(numex(&["validate", &p(d, "bad.jsonl")]).status.code(), Some(2));

    let extra = r#"{"id":"d1","text":"pulse 80","entities":[],"relations":[],"source":"x"}"#;
    fs::write(d.join("extra.jsonl"), format!("{extra}\n")).unwrap();
    assert_eq!(numex(&["validate", &p(d, "extra.jsonl")]).status.code(), Some(2));
    ok(&["--lenient", "validate", &p(d, "extra.jsonl")]);
}

#[test]
fn split_partitions_the_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "-n", "10", "-o", &p(d, "c.jsonl")]);
    ok(&[
        "split", "-i", &p(d, "c.jsonl"), "--train-count", "7", "--train-out", &p(d, "tr.jsonl"),
        "--test-out", &p(d, "te.jsonl"),
    ]);
    let lines = |f: &str| -> Vec<String> {
        fs::read_to_string(d.join(f)).unwrap().lines().map(String::from).collect()
    };
    let (tr, te, all) = (lines("tr.jsonl"), lines("te.jsonl"), lines("c.jsonl"));
    assert_eq!((tr.len(), te.len()), (7, 3));
    let mut joined: Vec<String> = tr.into_iter().chain(te).collect();
    joined.sort();
    let mut all_sorted = all;
    all_sorted.sort();
    assert_eq!(joined, all_sorted);
    let too_many = numex(&[
        "split", "-i", &p(d, "c.jsonl"), "--train-count", "11", "--train-out", &p(d, "a"),
        "--test-out", &p(d, "b"),
    ]);
    assert_eq!(too_many.status.code(), Some(2));
}

#[test]
fn tokenize_prints_offsets() {
    let out = ok(&["tokenize", "--text", "WBC-12.8*# x-ray. B12-500"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        text,
        "WBC\t0\t3\n12.8\t4\t8\n*\t8\t9\n#\t9\t10\nx\t11\t12\n-\t12\t13\nray\t13\t16\n.\t16\t17\n\nB\t18\t19\n12\t19\t21\n500\t22\t25\n"
    );
}

#[test]
fn train_records_feature_set_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "-n", "12", "--seed", "3", "-o", &p(d, "c.jsonl")]);
    for (run, out) in [("run1", "m1"), ("run2", "m2"), ("run2", "m2b")] {
        ok(&["train", "-c", &p(d, "c.jsonl"), "-o", &p(d, out), "--features", run]);
    }
    let manifest = |m: &str| -> Value {
        serde_json::from_str(&fs::read_to_string(d.join(m).join("manifest.json")).unwrap()).unwrap()
    };
    assert_eq!(manifest("m1")["feature_set"], "run1");
    assert_eq!(manifest("m2")["feature_set"], "run2");
    assert_ne!(manifest("m1")["config_hash"], manifest("m2")["config_hash"]);
    for f in ["crf.json", "pos.json", "svm.json", "manifest.json"] {
        assert_eq!(
            fs::read(d.join("m2").join(f)).unwrap(),
            fs::read(d.join("m2b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn train_flags_non_convergence_but_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "-n", "6", "-o", &p(d, "c.jsonl")]);
    fs::write(d.join("cfg.toml"), "[crf]\nmax_iter = 2\n").unwrap();
    let out = ok(&["train", "-c", &p(d, "c.jsonl"), "-o", &p(d, "m"), "--config", &p(d, "cfg.toml")]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning: CRF did not converge"));
    let m: Value = serde_json::from_str(&fs::read_to_string(d.join("m/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["crf_converged"], false);
    assert_eq!(m["config"]["crf"]["max_iter"], 2);
}

#[test]
fn train_rejects_empty_corpus_and_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("empty.jsonl"), "").unwrap();
    assert_eq!(numex(&["train", "-c", &p(d, "empty.jsonl"), "-o", &p(d, "m")]).status.code(), Some(2));
    ok(&["synth", "-n", "3", "-o", &p(d, "c.jsonl")]);
    fs::write(d.join("cfg.toml"), "[relation]\nmax_neg_ratio = 0.0\n").unwrap();
    let out = numex(&["train", "-c", &p(d, "c.jsonl"), "-o", &p(d, "m"), "--config", &p(d, "cfg.toml")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn extract_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    ok(&["extract", "-m", &p(d, "m"), "-i", &p(d, "c.jsonl"), "-o", &p(d, "pred.jsonl")]);
    ok(&["validate", &p(d, "pred.jsonl")]);

    let json = ok(&["eval", "--gold", &p(d, "c.jsonl"), "--pred", &p(d, "pred.jsonl"), "--format", "json"]);
    let report: Value = serde_json::from_slice(&json.stdout).unwrap();
    let table = String::from_utf8(
        ok(&["eval", "--gold", &p(d, "c.jsonl"), "--pred", &p(d, "pred.jsonl")]).stdout,
    )
    .unwrap();
    // the table shows each number the JSON carries, to four places
    for (row, key) in [("Recall", "recall"), ("Precision", "precision"), ("F-score", "f_score")] {
        let line = table.lines().find(|l| l.starts_with(row)).unwrap();
        let cells: Vec<&str> = line.split_whitespace().skip(1).collect();
        for (cell, stage) in cells.iter().zip(["ner", "attr", "val", "relations"]) {
            assert_eq!(*cell, format!("{:.4}", report[stage][key].as_f64().unwrap()), "{row} {stage}");
        }
    }

    // gold against itself scores 1 everywhere
    let same = ok(&["eval", "--gold", &p(d, "c.jsonl"), "--pred", &p(d, "c.jsonl"), "--format", "json"]);
    let same: Value = serde_json::from_slice(&same.stdout).unwrap();
    for stage in ["ner", "attr", "val", "relations"] {
        assert_eq!(same[stage]["f_score"], 1.0, "{stage}");
    }
}

#[test]
fn gold_entity_mode_needs_gold_entities() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    ok(&["extract", "-m", &p(d, "m"), "-i", &p(d, "c.jsonl"), "--entities", "gold", "-o", &p(d, "g.jsonl")]);
    ok(&["eval", "--gold", &p(d, "c.jsonl"), "--pred", &p(d, "g.jsonl"), "--rel-eval", "gold-entities"]);

    let gold = fs::read_to_string(d.join("c.jsonl")).unwrap();
    let mut docs: Vec<Value> = gold.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    docs[0]["entities"] = Value::Array(vec![]);
    docs[0]["relations"] = Value::Array(vec![]);
    let altered: String = docs.iter().map(|v| format!("{v}\n")).collect();
    fs::write(d.join("altered.jsonl"), altered).unwrap();
    let out = numex(&["eval", "--gold", &p(d, "c.jsonl"), "--pred", &p(d, "altered.jsonl"), "--rel-eval", "gold-entities"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_lists_missing_ids() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "-n", "3", "-o", &p(d, "c.jsonl")]);
    let first = fs::read_to_string(d.join("c.jsonl")).unwrap().lines().next().unwrap().to_string();
    fs::write(d.join("one.jsonl"), format!("{first}\n")).unwrap();
    let out = numex(&["eval", "--gold", &p(d, "c.jsonl"), "--pred", &p(d, "one.jsonl")]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("doc-0001") && err.contains("doc-0002"), "{err}");
}

#[test]
fn extract_text_and_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    let out = ok(&["extract", "-m", &p(d, "m"), "--text", ""]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["entities"], Value::Array(vec![]));
    assert_eq!(v["relations"], Value::Array(vec![]));

    fs::write(d.join("none.jsonl"), "").unwrap();
    let out = ok(&["extract", "-m", &p(d, "m"), "-i", &p(d, "none.jsonl")]);
    assert!(out.stdout.is_empty());

    let missing = numex(&["extract", "-m", &p(d, "m"), "-i", &p(d, "absent.jsonl")]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn model_problems_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    let crf = d.join("m/crf.json");
    let text = fs::read_to_string(&crf).unwrap().replacen("\"format_version\":1", "\"format_version\":2", 1);
    fs::write(&crf, text).unwrap();
    let out = numex(&["extract", "-m", &p(d, "m"), "--text", "pulse 80"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));

    let out = numex(&["extract", "-m", &p(d, "nowhere"), "--text", "pulse 80"]);
    assert_eq!(out.status.code(), Some(3));
}
