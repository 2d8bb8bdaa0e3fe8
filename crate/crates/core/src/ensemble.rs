//! Hard (majority) and soft (average) voting over per-model probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::{argmax, ClassProbs, Label, NUM_CLASSES};

const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Per-row class probabilities for a list of ids. Every row is non-negative
/// and sums to one within 1e-6.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    ids: Vec<String>,
    probs: Vec<ClassProbs>,
}

impl ProbabilityMatrix {
    pub fn new(ids: Vec<String>, probs: Vec<ClassProbs>) -> Result<ProbabilityMatrix> {
        if ids.len() != probs.len() {
            return Err(Error::Misaligned(format!("{} ids for {} rows", ids.len(), probs.len())));
        }
        for (row, p) in probs.iter().enumerate() {
            if let Some(v) = p.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0 + ROW_SUM_TOLERANCE) {
                return Err(Error::InvalidProbabilities {
                    row,
                    message: format!("entry {v} outside [0, 1]"),
                });
            }
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidProbabilities {
                    row,
                    message: format!("row sums to {sum}"),
                });
            }
        }
        Ok(ProbabilityMatrix { ids, probs })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rows(&self) -> &[ClassProbs] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn argmax_labels(&self) -> Vec<Label> {
        self.probs.iter().map(argmax).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteMode {
    #[default]
    Majority,
    Average,
}

impl std::str::FromStr for VoteMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majority" => Ok(VoteMode::Majority),
            "average" => Ok(VoteMode::Average),
            _ => Err(Error::Invalid(format!("vote mode must be majority or average, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VoteConfig {
    #[serde(default)]
    pub mode: VoteMode,
    /// One weight per model; empty means uniform.
    #[serde(default)]
    pub weights: Vec<f64>,
}

impl VoteConfig {
    /// Weights for `models` models, validated.
    pub fn resolved_weights(&self, models: usize) -> Result<Vec<f64>> {
        if self.weights.is_empty() {
            return Ok(vec![1.0; models]);
        }
        if self.weights.len() != models {
            return Err(Error::Config(format!(
                "{} vote weights for {models} models",
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("vote weights must be finite and non-negative".into()));
        }
        if self.weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("vote weights sum to zero".into()));
        }
        Ok(self.weights.clone())
    }

    pub fn combine(&self, matrices: &[ProbabilityMatrix]) -> Result<Vec<Label>> {
        match self.mode {
            VoteMode::Majority => majority_vote(matrices),
            VoteMode::Average => {
                let weights = self.resolved_weights(matrices.len())?;
                average_vote(matrices, &weights).map(|(labels, _)| labels)
            }
        }
    }
}

fn check_aligned(matrices: &[ProbabilityMatrix], min_models: usize) -> Result<()> {
    if matrices.len() < min_models {
        return Err(Error::Misaligned(format!(
            "need at least {min_models} matrices, got {}",
            matrices.len()
        )));
    }
    let first = &matrices[0];
    for (k, m) in matrices.iter().enumerate().skip(1) {
        if m.ids != first.ids {
            let at = m
                .ids
                .iter()
                .zip(&first.ids)
                .position(|(a, b)| a != b)
                .unwrap_or(m.ids.len().min(first.ids.len()));
            return Err(Error::Misaligned(format!("matrix {k} differs from matrix 0 at row {at}")));
        }
    }
    Ok(())
}

/// Each model votes for its argmax. Most votes wins; ties go to the tied
/// class with the largest summed probability, then to the earliest column.
pub fn majority_vote(matrices: &[ProbabilityMatrix]) -> Result<Vec<Label>> {
    check_aligned(matrices, 2)?;
    let rows = matrices[0].len();
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let mut votes = [0usize; NUM_CLASSES];
        let mut mass = [0.0; NUM_CLASSES];
        for m in matrices {
            let row = &m.probs[r];
            votes[argmax(row).index()] += 1;
            for c in 0..NUM_CLASSES {
                mass[c] += row[c];
            }
        }
        let mut best = 0;
        for c in 1..NUM_CLASSES {
            if votes[c] > votes[best] || (votes[c] == votes[best] && mass[c] > mass[best]) {
                best = c;
            }
        }
        out.push(Label::ALL[best]);
    }
    Ok(out)
}

/// Weighted mean of the model rows (weights normalized to sum to one) and
/// its argmax.
pub fn average_vote(matrices: &[ProbabilityMatrix], weights: &[f64]) -> Result<(Vec<Label>, ProbabilityMatrix)> {
    check_aligned(matrices, 1)?;
    let weights = VoteConfig {
        mode: VoteMode::Average,
        weights: weights.to_vec(),
    }
    .resolved_weights(matrices.len())?;
    let total: f64 = weights.iter().sum();
    let rows = matrices[0].len();
    let mut combined = Vec::with_capacity(rows);
    for r in 0..rows {
        let mut acc = [0.0; NUM_CLASSES];
        for (m, w) in matrices.iter().zip(&weights) {
            for (a, p) in acc.iter_mut().zip(&m.probs[r]) {
                *a += w / total * p;
            }
        }
        combined.push(acc);
    }
    let combined = ProbabilityMatrix::new(matrices[0].ids.clone(), combined)?;
    Ok((combined.argmax_labels(), combined))
}
