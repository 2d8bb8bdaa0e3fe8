mod common;

use std::fs;
use std::path::Path;

use arhate::augment::AugmentReport;
use arhate::evaluate::MetricsReport;
use arhate::pipeline::{run_experiment, RunManifest, RunOptions};
use arhate::Label;

fn opts(out: &Path) -> RunOptions {
    RunOptions {
        seed: None,
        out: Some(out.to_path_buf()),
    }
}

fn metrics(dir: &Path) -> MetricsReport {
    serde_json::from_str(&fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap()
}

#[test]
fn run_resume_and_partial_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::desk_fixture(tmp.path(), [40; 5], 1, "");
    let run = tmp.path().join("run");

    let first = run_experiment(&cfg, &opts(&run)).unwrap();
    assert_eq!(first.executed, ["ingest", "normalize", "train", "evaluate", "report"]);
    let m = metrics(&run);
    assert!(m.macro_f1 >= 95.0, "macro {}", m.macro_f1);
    assert_eq!(m.fold_detail.len(), 10);
    assert_eq!(m.config_hash.as_deref(), Some(first.run_id.as_str()));
    for f in ["manifest.json", "corpus.jsonl", "normalized.jsonl", "stats.json", "folds.json", "predictions.csv", "report.md"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.run_id, first.run_id);
    assert!(manifest.backends[0].weights_sha256.is_some());
    assert_eq!(manifest.stages.len(), 5);
    let before = common::snapshot(&run);

    let second = run_experiment(&cfg, &opts(&run)).unwrap();
    assert!(second.executed.is_empty());
    assert_eq!(second.skipped.len(), 5);
    assert_eq!(common::snapshot(&run), before);

    fs::remove_file(run.join("predictions.csv")).unwrap();
    let third = run_experiment(&cfg, &opts(&run)).unwrap();
    assert_eq!(third.executed, ["evaluate", "report"]);
    assert_eq!(third.skipped, ["ingest", "normalize", "train"]);
    assert_eq!(common::snapshot(&run), before);
}

#[test]
fn same_seed_gives_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::desk_fixture(tmp.path(), [30; 5], 1, "");
    run_experiment(&cfg, &opts(&tmp.path().join("a"))).unwrap();
    run_experiment(&cfg, &opts(&tmp.path().join("b"))).unwrap();
    assert_eq!(common::snapshot(&tmp.path().join("a")), common::snapshot(&tmp.path().join("b")));

    let other = run_experiment(
        &cfg,
        &RunOptions {
            seed: Some(6),
            out: Some(tmp.path().join("c")),
        },
    )
    .unwrap();
    let a: RunManifest = serde_json::from_str(&fs::read_to_string(tmp.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_ne!(a.run_id, other.run_id);
}

#[test]
fn default_directory_is_keyed_by_run_id() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::desk_fixture(tmp.path(), [20; 5], 1, "");
    fs::write(&cfg, fs::read_to_string(&cfg).unwrap().replace("[paths]\n", "[paths]\nruns_dir = \"runs\"\n")).unwrap();
    let out = run_experiment(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(out.dir, tmp.path().join("runs").join(&out.run_id));
    assert_eq!(out.run_id.len(), 16);
}

#[test]
fn unknown_backend_fails_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::desk_fixture(tmp.path(), [20; 5], 1, "");
    fs::write(&cfg, fs::read_to_string(&cfg).unwrap().replace("\"toy\"", "\"bert-xl\"")).unwrap();
    let err = run_experiment(&cfg, &opts(&tmp.path().join("run"))).unwrap_err();
    assert!(err.is_validation(), "{err}");
}

#[test]
fn too_small_class_is_a_stage_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::desk_fixture(tmp.path(), [20, 20, 20, 5, 20], 1, "");
    let run = tmp.path().join("run");
    let err = run_experiment(&cfg, &opts(&run)).unwrap_err();
    assert!(!err.is_validation(), "{err}");
    let marker = fs::read_to_string(run.join("stages/evaluate.json")).unwrap();
    assert!(marker.contains("failed"));
}

#[test]
fn augmented_ensemble_run() {
    let tmp = tempfile::tempdir().unwrap();
    let extra = common::augment_sources(tmp.path());
    let cfg = common::desk_fixture(tmp.path(), [30; 5], 3, &extra);
    let text = fs::read_to_string(&cfg).unwrap();
    fs::write(&cfg, text.replacen("[paths]\n", "[paths]\nregistry = \"registry.toml\"\n", 1)).unwrap();

    let run = tmp.path().join("run");
    let out = run_experiment(&cfg, &opts(&run)).unwrap();
    assert_eq!(out.executed, ["ingest", "normalize", "train", "augment", "evaluate", "report"]);
    let report: AugmentReport =
        serde_json::from_str(&fs::read_to_string(run.join("augment_report.json")).unwrap()).unwrap();
    assert!(report.reconciles());
    assert_eq!(report.added_direct, 15);
    assert!(!report.pseudo_counts.contains_key(&Label::NH));
    let m = metrics(&run);
    // held-out rows are gold only
    assert_eq!(m.supports.values().sum::<u64>(), 150);
    let md = fs::read_to_string(run.join("report.md")).unwrap();
    assert!(md.contains(&out.run_id));
}

#[test]
fn tuning_feeds_training() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::desk_fixture(
        tmp.path(),
        [20; 5],
        1,
        "\n[tune]\nenabled = true\n\n[tune.grid]\nepochs_axis = [1, 5]\nbatch_axis = [8]\nlr_axis = [0.5]\n\n[tune.grid.initial]\nepochs = 1\nbatch_size = 8\nlearning_rate = 0.5\nseed = 0\n",
    );
    let run = tmp.path().join("run");
    let out = run_experiment(&cfg, &opts(&run)).unwrap();
    assert_eq!(out.executed[2], "tune");
    let tuned: Vec<arhate::encoder::HyperParams> =
        serde_json::from_str(&fs::read_to_string(run.join("tuned.json")).unwrap()).unwrap();
    assert_eq!(tuned.len(), 1);
    assert_eq!(tuned[0].seed, 5);
    assert!(run.join("tune_trace_toy.csv").exists());
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.backends[0].hyperparams, tuned[0]);
}
