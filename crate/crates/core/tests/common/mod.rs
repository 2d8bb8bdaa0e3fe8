#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use arhate::corpus::write_corpus;
use arhate::encoder::toy::{forward_backward, Features, ToyParams};
use arhate::synthetic;
use arhate::Label;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Writes a synthetic corpus and a config for it; returns the config path.
pub fn desk_fixture(dir: &Path, counts: [usize; 5], members: usize, extra: &str) -> PathBuf {
    write_corpus(&dir.join("corpus.jsonl"), &synthetic::corpus(counts, 11)).unwrap();
    let mut cfg = String::from("seed = 5\n\n[paths]\ndata = \"corpus.jsonl\"\n\n[evaluate]\nfolds = 10\n");
    for _ in 0..members {
        cfg.push_str("\n[[encoder.member]]\nbackend = \"toy\"\nepochs = 5\nbatch_size = 8\nlearning_rate = 0.5\n");
    }
    cfg.push_str(extra);
    let path = dir.join("experiment.toml");
    fs::write(&path, cfg).unwrap();
    path
}

/// Every regular file under `dir`, relative path and contents, sorted.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-class (precision, recall, F1) and (macro, micro, weighted), all as
/// fractions, counted directly from the two label lists.
pub struct OracleMetrics {
    pub per_class: [(f64, f64, f64); 5],
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub weighted_f1: f64,
}

fn safe_div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

fn f1(p: f64, r: f64) -> f64 {
    safe_div(2.0 * p * r, p + r)
}

pub fn oracle_metrics(gold: &[Label], pred: &[Label]) -> OracleMetrics {
    let mut per_class = [(0.0, 0.0, 0.0); 5];
    let (mut tp_all, mut fp_all, mut fn_all) = (0.0, 0.0, 0.0);
    let mut weighted = 0.0;
    for (c, label) in Label::ALL.iter().enumerate() {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fneg = 0.0;
        for (g, p) in gold.iter().zip(pred) {
            match (g == label, p == label) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fneg += 1.0,
                (false, false) => {}
            }
        }
        let prec = safe_div(tp, tp + fp);
        let rec = safe_div(tp, tp + fneg);
        per_class[c] = (prec, rec, f1(prec, rec));
        weighted += per_class[c].2 * (tp + fneg);
        tp_all += tp;
        fp_all += fp;
        fn_all += fneg;
    }
    let micro_p = safe_div(tp_all, tp_all + fp_all);
    let micro_r = safe_div(tp_all, tp_all + fn_all);
    OracleMetrics {
        per_class,
        macro_f1: per_class.iter().map(|c| c.2).sum::<f64>() / 5.0,
        micro_f1: f1(micro_p, micro_r),
        weighted_f1: safe_div(weighted, gold.len() as f64),
    }
}

pub fn random_label(rng: &mut ChaCha8Rng) -> Label {
    Label::ALL[rng.gen_range(0..5)]
}

/// A random probability row.
pub fn random_row(rng: &mut ChaCha8Rng) -> [f64; 5] {
    let raw: [f64; 5] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
    let s: f64 = raw.iter().sum();
    raw.map(|v| v / s)
}

/// A random row whose largest entry is `class`.
pub fn row_with_argmax(rng: &mut ChaCha8Rng, class: usize) -> [f64; 5] {
    let top = rng.gen_range(0.45..0.9);
    let mut rest: [f64; 5] = std::array::from_fn(|_| rng.gen_range(0.01..1.0));
    rest[class] = 0.0;
    let s: f64 = rest.iter().sum();
    let mut row = rest.map(|v| v / s * (1.0 - top));
    row[class] = top;
    row
}

pub fn first_argmax(row: &[f64; 5]) -> usize {
    let mut best = 0;
    for c in 1..5 {
        if row[c] > row[best] {
            best = c;
        }
    }
    best
}

/// Plurality of argmax votes; ties go to the tied class with the largest
/// summed probability, then the lowest column.
pub fn oracle_majority(rows: &[[f64; 5]]) -> usize {
    let mut votes = [0usize; 5];
    let mut mass = [0.0; 5];
    for r in rows {
        votes[first_argmax(r)] += 1;
        for c in 0..5 {
            mass[c] += r[c];
        }
    }
    let top = *votes.iter().max().unwrap();
    let tied: Vec<usize> = (0..5).filter(|&c| votes[c] == top).collect();
    let mut best = tied[0];
    for &c in &tied[1..] {
        if mass[c] > mass[best] {
            best = c;
        }
    }
    best
}

pub fn oracle_average(rows: &[[f64; 5]]) -> usize {
    let mut mean = [0.0; 5];
    for r in rows {
        for c in 0..5 {
            mean[c] += r[c] / rows.len() as f64;
        }
    }
    first_argmax(&mean)
}

/// Largest relative error between the analytic gradient and central
/// differences over the given flat indices.
pub fn max_gradient_error(params: &ToyParams, batch: &[(Features, Label)], indices: &[usize], h: f64) -> f64 {
    let (_, grad) = forward_backward(params, batch).unwrap();
    let mut worst: f64 = 0.0;
    let mut p = params.clone();
    for &i in indices {
        let orig = p.get(i);
        p.set(i, orig + h);
        let (up, _) = forward_backward(&p, batch).unwrap();
        p.set(i, orig - h);
        let (down, _) = forward_backward(&p, batch).unwrap();
        p.set(i, orig);
        let numeric = (up - down) / (2.0 * h);
        let analytic = grad.get(i, params);
        let scale = analytic.abs().max(numeric.abs()).max(GRADIENT_FLOOR);
        worst = worst.max((analytic - numeric).abs() / scale);
    }
    worst
}

/// Denominator floor for relative gradient error, so entries that are zero
/// in both gradients compare as equal.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// Writes two external sources and a registry next to a desk fixture;
/// returns the config lines that enable augmentation with them.
pub fn augment_sources(dir: &Path) -> String {
    let abusive: Vec<_> = synthetic::class_rows(Label::Re, 15, 31, "abuse");
    write_corpus(&dir.join("abuse.jsonl"), &abusive).unwrap();
    let web: Vec<_> = Label::ALL
        .iter()
        .flat_map(|l| synthetic::class_rows(*l, 8, 32, "web"))
        .collect();
    write_corpus(&dir.join("web.jsonl"), &web).unwrap();
    fs::write(
        dir.join("registry.toml"),
        "[[dataset]]\nkey = \"abuse\"\npath = \"abuse.jsonl\"\nformat = \"jsonl\"\nhate_only = true\n\n\
         [[dataset]]\nkey = \"web\"\npath = \"web.jsonl\"\nformat = \"jsonl\"\n",
    )
    .unwrap();
    "\n[augment]\nenabled = true\ndirect_sources = [\"abuse\"]\npseudo_sources = [\"web\"]\nconfidence_threshold = 0.3\n"
        .to_string()
}
