//! Coordinate-wise hyperparameter search: epochs first, then batch size,
//! then learning rate, each axis tried with the other two held at the
//! current incumbent.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledText;
use crate::encoder::{EncoderSpec, HyperParams};
use crate::error::{Error, Result};
use crate::evaluate::{cross_validate, FoldPlan, SingleModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchGrid {
    pub epochs_axis: Vec<usize>,
    pub batch_axis: Vec<usize>,
    pub lr_axis: Vec<f64>,
    pub initial: HyperParams,
}

impl Default for SearchGrid {
    fn default() -> Self {
        SearchGrid {
            epochs_axis: vec![2, 3, 4, 5, 10],
            batch_axis: vec![8, 16, 32, 64],
            lr_axis: vec![1e-5, 2e-5, 3e-5, 4e-5, 5e-5],
            initial: HyperParams {
                epochs: 2,
                batch_size: 8,
                learning_rate: 1e-5,
                seed: 0,
            },
        }
    }
}

impl SearchGrid {
    pub fn load(path: &Path) -> Result<SearchGrid> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let grid: SearchGrid =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs_axis.is_empty() || self.batch_axis.is_empty() || self.lr_axis.is_empty() {
            return Err(Error::Config("search axes must be non-empty".into()));
        }
        let init = &self.initial;
        if !self.epochs_axis.contains(&init.epochs) {
            return Err(Error::Config(format!("initial epochs {} not on the epochs axis", init.epochs)));
        }
        if !self.batch_axis.contains(&init.batch_size) {
            return Err(Error::Config(format!("initial batch {} not on the batch axis", init.batch_size)));
        }
        if !self.lr_axis.contains(&init.learning_rate) {
            return Err(Error::Config(format!("initial lr {} not on the lr axis", init.learning_rate)));
        }
        for &e in &self.epochs_axis {
            HyperParams { epochs: e, ..*init }.validate()?;
        }
        for &b in &self.batch_axis {
            HyperParams { batch_size: b, ..*init }.validate()?;
        }
        for &lr in &self.lr_axis {
            HyperParams { learning_rate: lr, ..*init }.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.epochs_axis.len() + self.batch_axis.len() + self.lr_axis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Epochs,
    Batch,
    Lr,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Epochs => "epochs",
            Stage::Batch => "batch",
            Stage::Lr => "lr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub stage: Stage,
    pub hp: HyperParams,
    /// Micro-F1 in percent; `None` when the point failed.
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// True when the score was reused from an earlier stage.
    pub cached: bool,
}

/// Orders candidates so that the preferred one compares greatest: higher
/// score, then fewer epochs, smaller batch, smaller learning rate.
fn preference(a: (&HyperParams, f64), b: (&HyperParams, f64)) -> Ordering {
    a.1.total_cmp(&b.1)
        .then(b.0.epochs.cmp(&a.0.epochs))
        .then(b.0.batch_size.cmp(&a.0.batch_size))
        .then(b.0.learning_rate.total_cmp(&a.0.learning_rate))
}

fn best_of<'a>(entries: impl Iterator<Item = &'a SearchTrace>) -> Option<(HyperParams, f64)> {
    entries
        .filter_map(|t| t.score.map(|s| (t.hp, s)))
        .max_by(|a, b| preference((&a.0, a.1), (&b.0, b.1)))
}

fn same_point(a: &HyperParams, b: &HyperParams) -> bool {
    a.epochs == b.epochs && a.batch_size == b.batch_size && a.learning_rate.to_bits() == b.learning_rate.to_bits()
}

/// Runs the three stages. `evaluate` scores one point (micro-F1 percent);
/// points in a stage are scored in parallel and a point seen in an earlier
/// stage is not re-evaluated.
pub fn coordinate_search<F>(grid: &SearchGrid, evaluate: F) -> Result<(HyperParams, Vec<SearchTrace>)>
where
    F: Fn(&HyperParams) -> Result<f64> + Sync,
{
    grid.validate()?;
    let mut trace: Vec<SearchTrace> = Vec::with_capacity(grid.len());
    let mut incumbent = grid.initial;

    for stage in [Stage::Epochs, Stage::Batch, Stage::Lr] {
        let points: Vec<HyperParams> = match stage {
            Stage::Epochs => grid.epochs_axis.iter().map(|&e| HyperParams { epochs: e, ..incumbent }).collect(),
            Stage::Batch => grid.batch_axis.iter().map(|&b| HyperParams { batch_size: b, ..incumbent }).collect(),
            Stage::Lr => grid.lr_axis.iter().map(|&lr| HyperParams { learning_rate: lr, ..incumbent }).collect(),
        };
        let entries: Vec<SearchTrace> = points
            .par_iter()
            .map(|hp| {
                if let Some(prev) = trace.iter().find(|t| same_point(&t.hp, hp)) {
                    return SearchTrace {
                        stage,
                        cached: true,
                        ..prev.clone()
                    };
                }
                let (score, error) = match evaluate(hp) {
                    Ok(s) if s.is_finite() => (Some(s), None),
                    Ok(s) => (None, Some(format!("non-finite score {s}"))),
                    Err(e) => (None, Some(e.to_string())),
                };
                if let Some(e) = &error {
                    log::warn!("grid point {hp} failed: {e}");
                }
                SearchTrace {
                    stage,
                    hp: *hp,
                    score,
                    error,
                    cached: false,
                }
            })
            .collect();
        if let Some((hp, score)) = best_of(entries.iter()) {
            log::info!("{} stage best: {hp} ({score:.2})", stage.as_str());
            incumbent = hp;
        }
        trace.extend(entries);
    }

    best_of(trace.iter())
        .map(|(hp, _)| (hp, trace))
        .ok_or(Error::AllGridPointsFailed)
}

/// Scores each grid point by cross-validated micro-F1 of one backend.
pub fn cv_search(
    spec: &EncoderSpec,
    grid: &SearchGrid,
    corpus: &[LabeledText],
    plan: &FoldPlan,
) -> Result<(HyperParams, Vec<SearchTrace>)> {
    coordinate_search(grid, |hp| {
        let recipe = SingleModel {
            spec: spec.clone(),
            hp: *hp,
        };
        cross_validate(corpus, &recipe, plan).map(|r| r.micro_f1)
    })
}

pub fn write_trace_csv(path: &Path, trace: &[SearchTrace]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let io = |e: csv::Error| Error::io(path, e.into());
    w.write_record(["stage", "epochs", "batch_size", "learning_rate", "micro_f1", "cached", "error"])
        .map_err(io)?;
    for t in trace {
        w.write_record([
            t.stage.as_str().to_string(),
            t.hp.epochs.to_string(),
            t.hp.batch_size.to_string(),
            format!("{:e}", t.hp.learning_rate),
            t.score.map(|s| format!("{s:.2}")).unwrap_or_default(),
            t.cached.to_string(),
            t.error.clone().unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
