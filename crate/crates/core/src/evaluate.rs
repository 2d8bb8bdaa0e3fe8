//! Stratified k-fold cross-validation and classification metrics.
//!
//! Per-class precision, recall and F1 come from a 5x5 confusion matrix
//! (rows gold, columns predicted); undefined ratios are 0. Macro is the
//! plain mean over all five classes, weighted uses gold supports, and micro
//! pools true positives (equal to accuracy for single-label data).
//!
//! A cross-validation report holds the mean of the per-fold values, plus
//! metrics over the pooled predictions and the per-fold detail.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledText, Origin};
use crate::encoder::{self, EncoderSpec, HyperParams};
use crate::ensemble::VoteConfig;
use crate::error::{Error, Result};
use crate::label::{argmax, Label, NUM_CLASSES};

pub const DEFAULT_FOLDS: usize = 10;

/// Rows that take part in fold assignment: gold rows not flagged empty.
pub fn is_evaluable(row: &LabeledText) -> bool {
    row.origin == Origin::Gold && !row.is_flagged_empty()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignments.get(id).copied()
    }
}

/// Shuffles each class with `seed`, then deals its rows round-robin over
/// the folds. The dealing cursor carries over from one class to the next so
/// fold sizes stay within one row of each other.
pub fn stratified_folds(corpus: &[LabeledText], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Invalid(format!("need at least 2 folds, got {k}")));
    }
    let mut by_class: [Vec<&str>; NUM_CLASSES] = Default::default();
    for row in corpus.iter().filter(|r| is_evaluable(r)) {
        by_class[row.label.index()].push(&row.id);
    }
    for (label, ids) in Label::ALL.iter().zip(&by_class) {
        if !ids.is_empty() && ids.len() < k {
            return Err(Error::ClassTooSmall {
                label: *label,
                count: ids.len(),
                k,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = BTreeMap::new();
    let mut cursor = 0;
    for mut ids in by_class {
        ids.shuffle(&mut rng);
        for id in ids {
            if assignments.insert(id.to_string(), cursor).is_some() {
                return Err(Error::DuplicateId(id.to_string()));
            }
            cursor = (cursor + 1) % k;
        }
    }
    Ok(FoldPlan { k, seed, assignments })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `counts[gold][predicted]`
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_predictions(gold: &[Label], predicted: &[Label]) -> Result<ConfusionMatrix> {
        if gold.len() != predicted.len() {
            return Err(Error::Misaligned(format!(
                "{} gold labels for {} predictions",
                gold.len(),
                predicted.len()
            )));
        }
        let mut cm = ConfusionMatrix::default();
        for (g, p) in gold.iter().zip(predicted) {
            cm.counts[g.index()][p.index()] += 1;
        }
        Ok(cm)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn supports(&self) -> [u64; NUM_CLASSES] {
        self.counts.map(|row| row.iter().sum())
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for g in 0..NUM_CLASSES {
            for p in 0..NUM_CLASSES {
                self.counts[g][p] += other.counts[g][p];
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassScores {
    fn scaled(self, s: f64) -> ClassScores {
        ClassScores {
            precision: self.precision * s,
            recall: self.recall * s,
            f1: self.f1 * s,
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Precision, recall and F1 per class, as fractions.
pub fn per_class_metrics(cm: &ConfusionMatrix) -> [ClassScores; NUM_CLASSES] {
    std::array::from_fn(|c| {
        let diag = cm.counts[c][c];
        let row: u64 = cm.counts[c].iter().sum();
        let col: u64 = (0..NUM_CLASSES).map(|g| cm.counts[g][c]).sum();
        let (precision, recall) = (ratio(diag, col), ratio(diag, row));
        ClassScores {
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    })
}

pub fn macro_average(values: &[f64; NUM_CLASSES]) -> f64 {
    values.iter().sum::<f64>() / NUM_CLASSES as f64
}

pub fn weighted_average(values: &[f64; NUM_CLASSES], supports: &[u64; NUM_CLASSES]) -> f64 {
    let total: u64 = supports.iter().sum();
    if total == 0 {
        return 0.0;
    }
    values.iter().zip(supports).map(|(v, s)| v * *s as f64).sum::<f64>() / total as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub weighted_f1: f64,
}

/// Macro, micro and weighted F1 on the same scale as the inputs. Micro is
/// the support-weighted recall, which equals pooled TP / (TP + FN) and, for
/// single-label data, pooled micro-F1.
pub fn aggregate(per_class: &[ClassScores; NUM_CLASSES], supports: &[u64; NUM_CLASSES]) -> Aggregates {
    let f1 = per_class.map(|s| s.f1);
    Aggregates {
        macro_f1: macro_average(&f1),
        micro_f1: weighted_average(&per_class.map(|s| s.recall), supports),
        weighted_f1: weighted_average(&f1, supports),
    }
}

/// Metrics of one confusion matrix, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub per_class: BTreeMap<Label, ClassScores>,
    pub supports: BTreeMap<Label, u64>,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub weighted_f1: f64,
    pub confusion: ConfusionMatrix,
}

impl FoldMetrics {
    pub fn from_confusion(cm: ConfusionMatrix) -> FoldMetrics {
        let scores = per_class_metrics(&cm);
        let supports = cm.supports();
        let agg = aggregate(&scores, &supports);
        FoldMetrics {
            per_class: Label::ALL.iter().map(|l| (*l, scores[l.index()].scaled(100.0))).collect(),
            supports: Label::ALL.iter().map(|l| (*l, supports[l.index()])).collect(),
            macro_f1: agg.macro_f1 * 100.0,
            micro_f1: agg.micro_f1 * 100.0,
            weighted_f1: agg.weighted_f1 * 100.0,
            confusion: cm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Fold-mean per-class scores, percent.
    pub per_class: BTreeMap<Label, ClassScores>,
    /// Gold supports summed over folds.
    pub supports: BTreeMap<Label, u64>,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub weighted_f1: f64,
    /// Metrics over all held-out predictions pooled together.
    pub pooled: FoldMetrics,
    pub fold_detail: Vec<FoldMetrics>,
    pub k: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl MetricsReport {
    pub fn from_folds(folds: Vec<FoldMetrics>, seed: u64) -> MetricsReport {
        let n = folds.len().max(1) as f64;
        let mean = |f: &dyn Fn(&FoldMetrics) -> f64| folds.iter().map(f).sum::<f64>() / n;
        let per_class = Label::ALL
            .iter()
            .map(|l| {
                let s = ClassScores {
                    precision: mean(&|m| m.per_class[l].precision),
                    recall: mean(&|m| m.per_class[l].recall),
                    f1: mean(&|m| m.per_class[l].f1),
                };
                (*l, s)
            })
            .collect();
        let mut pooled = ConfusionMatrix::default();
        for f in &folds {
            pooled.add(&f.confusion);
        }
        let pooled = FoldMetrics::from_confusion(pooled);
        MetricsReport {
            per_class,
            supports: pooled.supports.clone(),
            macro_f1: mean(&|m| m.macro_f1),
            micro_f1: mean(&|m| m.micro_f1),
            weighted_f1: mean(&|m| m.weighted_f1),
            pooled,
            k: folds.len(),
            fold_detail: folds,
            seed,
            config_hash: None,
        }
    }
}

/// How to turn a training split into predictions for a test split.
pub trait ModelRecipe: Sync {
    fn fit_predict(&self, train: &[LabeledText], test: &[&LabeledText]) -> Result<Vec<Label>>;
}

/// One backend with fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct SingleModel {
    pub spec: EncoderSpec,
    pub hp: HyperParams,
}

impl ModelRecipe for SingleModel {
    fn fit_predict(&self, train: &[LabeledText], test: &[&LabeledText]) -> Result<Vec<Label>> {
        let model = encoder::fit(&self.spec, &self.hp, train)?;
        let texts: Vec<&str> = test.iter().map(|r| r.model_text()).collect();
        Ok(encoder::predict_proba(&model, &texts).iter().map(argmax).collect())
    }
}

/// Several backends combined by voting. A single member degenerates to its
/// own argmax.
#[derive(Debug, Clone)]
pub struct EnsembleRecipe {
    pub members: Vec<(EncoderSpec, HyperParams)>,
    pub vote: VoteConfig,
}

impl ModelRecipe for EnsembleRecipe {
    fn fit_predict(&self, train: &[LabeledText], test: &[&LabeledText]) -> Result<Vec<Label>> {
        let matrices = self
            .members
            .iter()
            .map(|(spec, hp)| {
                let model = encoder::fit(spec, hp, train)?;
                encoder::predict_matrix(&model, test)
            })
            .collect::<Result<Vec<_>>>()?;
        match matrices.len() {
            0 => Err(Error::Config("ensemble has no members".into())),
            1 => Ok(matrices[0].argmax_labels()),
            _ => self.vote.combine(&matrices),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeldOutPrediction {
    pub id: String,
    pub fold: usize,
    pub gold: Label,
    pub predicted: Label,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub report: MetricsReport,
    pub predictions: Vec<HeldOutPrediction>,
}

pub fn cross_validate(corpus: &[LabeledText], recipe: &dyn ModelRecipe, plan: &FoldPlan) -> Result<MetricsReport> {
    cross_validate_detailed(corpus, recipe, plan).map(|o| o.report)
}

/// Trains on k-1 folds plus every non-gold row, predicts the held-out gold
/// fold. Folds run in parallel; results are reduced in fold order.
pub fn cross_validate_detailed(corpus: &[LabeledText], recipe: &dyn ModelRecipe, plan: &FoldPlan) -> Result<CvOutcome> {
    let mut gold_ids = HashSet::new();
    for row in corpus.iter().filter(|r| is_evaluable(r)) {
        if plan.fold_of(&row.id).is_none() {
            return Err(Error::Invalid(format!("row {} has no fold assignment", row.id)));
        }
        gold_ids.insert(row.id.as_str());
    }
    if gold_ids.len() != plan.assignments.len() {
        return Err(Error::Invalid("fold plan references rows missing from the corpus".into()));
    }
    let extra: Vec<&LabeledText> = corpus
        .iter()
        .filter(|r| r.origin != Origin::Gold && r.usable_text().is_some())
        .collect();

    let results: Vec<Result<(FoldMetrics, Vec<HeldOutPrediction>)>> = (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let mut train = Vec::new();
            let mut test = Vec::new();
            for row in corpus.iter().filter(|r| is_evaluable(r)) {
                if plan.fold_of(&row.id) == Some(fold) {
                    test.push(row);
                } else {
                    train.push(row.clone());
                }
            }
            train.extend(extra.iter().map(|r| (*r).clone()));
            let predicted = recipe.fit_predict(&train, &test).map_err(|e| Error::Fold {
                fold,
                source: Box::new(e),
            })?;
            let gold: Vec<Label> = test.iter().map(|r| r.label).collect();
            let cm = ConfusionMatrix::from_predictions(&gold, &predicted)?;
            let held_out = test
                .iter()
                .zip(&predicted)
                .map(|(r, p)| HeldOutPrediction {
                    id: r.id.clone(),
                    fold,
                    gold: r.label,
                    predicted: *p,
                })
                .collect();
            Ok((FoldMetrics::from_confusion(cm), held_out))
        })
        .collect();

    let mut folds = Vec::with_capacity(plan.k);
    let mut predictions = Vec::new();
    for r in results {
        let (m, p) = r?;
        folds.push(m);
        predictions.extend(p);
    }
    Ok(CvOutcome {
        report: MetricsReport::from_folds(folds, plan.seed),
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows_with_counts(counts: [usize; NUM_CLASSES]) -> Vec<LabeledText> {
        let mut out = Vec::new();
        for (l, n) in Label::ALL.iter().zip(counts) {
            for i in 0..n {
                out.push(LabeledText::gold(format!("{l}{i}"), "x", *l, "t"));
            }
        }
        out
    }

    #[test]
    fn perfectly_divisible_classes() {
        let plan = stratified_folds(&rows_with_counts([10; 5]), 10, 3).unwrap();
        let mut per_fold = [[0usize; NUM_CLASSES]; 10];
        for (id, f) in &plan.assignments {
            let l: Label = id[..2].parse().unwrap();
            per_fold[*f][l.index()] += 1;
        }
        assert!(per_fold.iter().all(|f| f == &[1; 5]));
    }

    #[test]
    fn degenerate_fold_counts() {
        let rows = rows_with_counts([10; 5]);
        assert!(stratified_folds(&rows, 1, 0).is_err());
        match stratified_folds(&rows_with_counts([10, 10, 3, 10, 10]), 10, 0) {
            Err(Error::ClassTooSmall { label, count, .. }) => assert_eq!((label, count), (Label::Re, 3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pseudo_rows_are_not_assigned() {
        let mut rows = rows_with_counts([2; 5]);
        rows[0].origin = Origin::Pseudo;
        let plan = stratified_folds(&rows, 2, 0);
        // NH now has a single gold row
        assert!(matches!(plan, Err(Error::ClassTooSmall { label: Label::NH, .. })));
    }

    #[test]
    fn identity_confusion_is_perfect() {
        let mut cm = ConfusionMatrix::default();
        for c in 0..NUM_CLASSES {
            cm.counts[c][c] = 3;
        }
        for s in per_class_metrics(&cm) {
            assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn hand_computed_racial_cells() {
        let mut cm = ConfusionMatrix::default();
        let (nh, ra) = (Label::NH.index(), Label::Ra.index());
        cm.counts[ra][ra] = 8;
        cm.counts[ra][nh] = 2;
        cm.counts[nh][ra] = 1;
        cm.counts[nh][nh] = 20;
        let s = per_class_metrics(&cm)[ra];
        assert!((s.recall - 0.8).abs() < 1e-15);
        assert!((s.precision - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_scores_zero() {
        let cm = ConfusionMatrix::from_predictions(&[Label::NH, Label::GH], &[Label::NH, Label::GH]).unwrap();
        assert_eq!(per_class_metrics(&cm)[Label::Se.index()], ClassScores::default());
    }

    #[test]
    fn reference_macro_and_weighted_reconstruct() {
        let supports = [8332, 1397, 722, 526, 657];
        let majority = [92.73, 61.89, 82.56, 53.85, 72.27];
        assert!((macro_average(&majority) - 72.66).abs() < 0.01);
        assert!((weighted_average(&majority, &supports) - 85.48).abs() < 0.02);
        let augmented = [92.41, 63.27, 83.50, 57.25, 72.58];
        assert!((macro_average(&augmented) - 73.80).abs() < 0.01);
    }

    struct Constant(Label);

    impl ModelRecipe for Constant {
        fn fit_predict(&self, _: &[LabeledText], test: &[&LabeledText]) -> Result<Vec<Label>> {
            Ok(vec![self.0; test.len()])
        }
    }

    #[test]
    fn constant_model_micro_is_majority_share() {
        let rows = rows_with_counts([8332, 1397, 722, 526, 657]);
        let plan = stratified_folds(&rows, 10, 1).unwrap();
        let out = cross_validate_detailed(&rows, &Constant(Label::NH), &plan).unwrap();
        assert_eq!(out.report.fold_detail.len(), 10);
        assert!((out.report.pooled.micro_f1 - 100.0 * 8332.0 / 11634.0).abs() < 1e-9);
        assert!((out.report.micro_f1 - 71.6).abs() < 0.05);
        assert_eq!(out.predictions.len(), rows.len());
    }
}
