use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use codeorigin_core::corpus::synthetic::fixture_corpus;
use codeorigin_core::corpus::{DatasetKind, SampleSet, Split};
use serde_json::Value;

const TINY: [&str; 10] = [
    "--set",
    "encoder_size=\"tiny\"",
    "--set",
    "epochs_stage1=1",
    "--set",
    "epochs_stage2=1",
    "--set",
    "batch_contrastive=8",
    "--set",
    "batch_classify=8",
];

fn bin(workdir: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_codeorigin"));
    c.arg("--workdir").arg(workdir);
    c.env_remove("CODEORIGIN_DATA_DIR").env_remove("CODEORIGIN_WORKDIR");
    c
}

fn run(workdir: &Path, args: &[&str]) -> Output {
    bin(workdir).args(args).output().unwrap()
}

fn ok(workdir: &Path, args: &[&str]) -> Value {
    let out = run(workdir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap_or(Value::Null)
}

fn small_dataset(dir: &Path) {
    let full = fixture_corpus(DatasetKind::GptSniffer, 5);
    let train = full.split(Split::Train).stratified_subsample(8, 5);
    let test = full.split(Split::Test).stratified_subsample(6, 5);
    let set: SampleSet = train.merged(&test).unwrap();
    std::fs::create_dir_all(dir.join("data")).unwrap();
    set.write_jsonl(&dir.join("data/gptsniffer.jsonl")).unwrap();
}

fn manifests(dir: &Path) -> Vec<Value> {
    let mut files: Vec<_> = std::fs::read_dir(dir.join("manifests"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap())
        .collect()
}

#[test]
fn unknown_flag_exits_2_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["train-stage1", "--dataset", "gptsniffer", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "{err}");
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert!(run(dir.path(), &["--help"]).status.success());
}

#[test]
fn failures_print_one_json_line_and_record_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["eval", "--model", "missing", "--dataset", "gptsniffer"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    let lines: Vec<_> = err.lines().filter(|l| !l.trim().is_empty()).collect();
    assert_eq!(lines.len(), 1, "{err}");
    let v: Value = serde_json::from_str(lines[0]).unwrap();
    assert!(v["error"].is_string() && v["message"].is_string());
    let m = manifests(dir.path());
    assert_eq!(m.len(), 1);
    assert_eq!(m[0]["status"], "failed");
    assert_eq!(m[0]["exit_code"], 1);

    let out = run(dir.path(), &["--set", "lr=-1", "ingest", "--dataset", "gptsniffer", "--fixture"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_precedence_defaults_then_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), "seed = 7\ntau = 0.1\n").unwrap();
    ok(dir.path(), &["--config", "run.toml", "--set", "tau=0.2", "ingest", "--dataset", "whodunit", "--fixture"]);
    let m = &manifests(dir.path())[0];
    assert_eq!(m["status"], "succeeded");
    assert_eq!(m["config"]["seed"], 7);
    assert_eq!(m["config"]["tau"], 0.2);
    assert_eq!(m["config"]["lr"], 2e-5);
    assert!(dir.path().join("data/whodunit.jsonl").is_file());
}

#[test]
fn identical_commands_give_identical_manifests() {
    let dir = tempfile::tempdir().unwrap();
    for _ in 0..2 {
        ok(dir.path(), &["--seed", "3", "ingest", "--dataset", "gptsniffer", "--fixture"]);
    }
    let mut m = manifests(dir.path());
    assert_eq!(m.len(), 2);
    for v in &mut m {
        let o = v.as_object_mut().unwrap();
        o.remove("started_at");
        o.remove("finished_at");
    }
    assert_eq!(m[0], m[1]);
}

#[test]
fn preprocess_adds_removed_comment_bytes() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    ok(dir.path(), &["preprocess", "--dataset", "gptsniffer", "--output", "clean.jsonl"]);
    let text = std::fs::read_to_string(dir.path().join("clean.jsonl")).unwrap();
    let rows: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 28);
    assert!(rows.iter().all(|r| r["removed_comment_bytes"].is_u64()));
    assert!(rows.iter().any(|r| r["removed_comment_bytes"].as_u64().unwrap() > 0));
    assert!(rows.iter().all(|r| !r["source"].as_str().unwrap().contains("//")));
}

#[test]
fn two_stage_training_eval_predict_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    small_dataset(w);

    let mut args = TINY.to_vec();
    args.extend(["train-stage1", "--dataset", "gptsniffer"]);
    let s1 = ok(w, &args);
    assert!(w.join("runs/gptsniffer/stage1/provenance.json").is_file(), "{s1}");

    let mut args = TINY.to_vec();
    args.extend(["train-stage2", "--dataset", "gptsniffer", "--init", "runs/gptsniffer/stage1"]);
    ok(w, &args);
    let model = "runs/gptsniffer/stage2";
    assert!(w.join(model).join("provenance.json").is_file());

    let e = ok(w, &["eval", "--model", model, "--dataset", "gptsniffer"]);
    assert_eq!(e["n"], 12);
    for f in ["report.json", "report.md", "predictions.jsonl"] {
        assert!(w.join(model).join("eval-gptsniffer").join(f).is_file(), "{f}");
    }

    std::fs::write(w.join("Snippet.java"), "class Snippet { int twice(int x) { return 2 * x; } }\n").unwrap();
    let p = ok(w, &["predict", "--model", model, "Snippet.java"]);
    let prob = p["probability"].as_f64().unwrap();
    assert!(prob > 0.0 && prob < 1.0);

    let mut child = bin(w)
        .args(["predict", "--model", model, "--language", "java"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"class Snippet { int twice(int x) { return 2 * x; } }\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let q: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(q["probability"], p["probability"]);

    ok(w, &["export-embeddings", "--model", model, "--dataset", "gptsniffer", "--out", "emb"]);
    assert!(w.join("emb/embeddings.npy").is_file());
    let v = ok(w, &["visualize", "--embeddings", "emb", "--out", "tsne.svg", "--perplexity", "3", "--iterations", "200"]);
    assert!(v["silhouette"].is_number());
    assert!(w.join("tsne.svg").is_file());

    let m = manifests(w);
    assert!(m.iter().all(|x| x["status"] == "succeeded"));
    assert!(m.iter().any(|x| x["command"] == "train-stage1" && x["config"]["encoder_size"] == "tiny"));
}
