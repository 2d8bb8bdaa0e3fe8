mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use arhate::corpus::write_corpus;
use arhate::synthetic;

fn arhate(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arhate"))
        .args(args)
        .current_dir(dir)
        .env_remove("ARHATE_DATA")
        .env_remove("ARHATE_RUNS_DIR")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

#[test]
fn step_by_step_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_corpus(&d.join("raw.jsonl"), &synthetic::corpus([20; 5], 3)).unwrap();

    ok(arhate(d, &["normalize", "--in", "raw.jsonl", "--out", "norm.jsonl"]));
    assert!(fs::read_to_string(d.join("norm.jsonl")).unwrap().contains("norm_text"));

    ok(arhate(d, &["split", "--data", "norm.jsonl", "--folds", "5", "--seed", "2", "--out", "folds.json"]));
    let folds: serde_json::Value = serde_json::from_slice(&fs::read(d.join("folds.json")).unwrap()).unwrap();
    assert_eq!(folds["k"], 5);

    let train = ["train", "--data", "norm.jsonl", "--backend", "toy", "--epochs", "3", "--learning-rate", "0.5"];
    ok(arhate(d, &[&train[..], &["--seed", "1", "--out", "model"]].concat()));
    ok(arhate(d, &[&train[..], &["--seed", "2", "--out", "model2"]].concat()));
    ok(arhate(d, &["predict", "--model", "model", "--data", "norm.jsonl", "--out", "p1.csv"]));
    ok(arhate(d, &["predict", "--model", "model2", "--data", "norm.jsonl", "--out", "p2.csv"]));
    ok(arhate(d, &["vote", "--probs", "p1.csv", "p2.csv", "--mode", "average", "--weights", "1,1", "--out", "votes.csv"]));
    let votes = fs::read_to_string(d.join("votes.csv")).unwrap();
    assert_eq!(votes.lines().count(), 101);
    assert!(votes.starts_with("id,label"));

    let eval = ok(arhate(
        d,
        &["evaluate", "--data", "norm.jsonl", "--backend", "toy", "--epochs", "5", "--learning-rate", "0.5", "--folds", "5", "--out", "eval"],
    ));
    assert!(String::from_utf8_lossy(&eval.stdout).contains("macro"));
    assert!(d.join("eval/metrics.json").exists());

    fs::write(d.join("grid.toml"), "epochs_axis = [1, 3]\nbatch_axis = [8]\nlr_axis = [0.5]\n\n[initial]\nepochs = 1\nbatch_size = 8\nlearning_rate = 0.5\nseed = 0\n").unwrap();
    ok(arhate(d, &["tune", "--data", "norm.jsonl", "--backend", "toy", "--grid", "grid.toml", "--folds", "5", "--out", "tune"]));
    assert!(d.join("tune/best.json").exists());

    let report = ok(arhate(d, &["report", "--runs", "eval", "--format", "csv"]));
    let text = String::from_utf8_lossy(&report.stdout);
    assert!(text.lines().any(|l| l.contains(",eval,")), "{text}");
}

#[test]
fn augment_command() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    common::augment_sources(d);
    write_corpus(&d.join("base.jsonl"), &synthetic::corpus([20; 5], 3)).unwrap();
    fs::write(d.join("plan.toml"), "direct_sources = [\"abuse\"]\npseudo_sources = [\"web\"]\nconfidence_threshold = 0.3\n").unwrap();
    ok(arhate(
        d,
        &["augment", "--base", "base.jsonl", "--plan", "plan.toml", "--registry", "registry.toml", "--backend", "toy", "--learning-rate", "0.5", "--epochs", "4", "--report", "aug.json", "--out", "aug.jsonl"],
    ));
    let report: arhate::augment::AugmentReport = serde_json::from_slice(&fs::read(d.join("aug.json")).unwrap()).unwrap();
    assert!(report.reconciles());
    assert_eq!(report.added_direct, 15);
}

#[test]
fn run_command_and_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = common::desk_fixture(d, [20; 5], 1, "");
    let cfg = cfg.to_str().unwrap();
    let out = ok(arhate(d, &["run", "--config", cfg, "--out", "run"]));
    assert!(String::from_utf8_lossy(&out.stdout).contains("run"));
    assert!(d.join("run/report.md").exists());

    // validation problems exit 1
    assert_eq!(code(&arhate(d, &["run"])), 1);
    assert_eq!(code(&arhate(d, &["frobnicate"])), 1);
    assert_eq!(code(&arhate(d, &["train", "--data", "corpus.jsonl", "--backend", "gpt9", "--out", "m"])), 1);
    fs::write(d.join("bad.toml"), "seed = \"x\"\n").unwrap();
    assert_eq!(code(&arhate(d, &["run", "--config", "bad.toml"])), 1);
    assert_eq!(code(&arhate(d, &["--help"])), 0);

    // a stage that cannot complete exits 2
    let small = tempfile::tempdir().unwrap();
    let cfg = common::desk_fixture(small.path(), [20, 20, 3, 20, 20], 1, "");
    let o = arhate(small.path(), &["run", "--config", cfg.to_str().unwrap(), "--out", "run"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("evaluate"));
    assert_eq!(code(&arhate(d, &["predict", "--model", "missing", "--data", "corpus.jsonl", "--out", "p.csv"])), 2);
}
