//! Training-set augmentation from external hate corpora.
//!
//! Sources come in two kinds. Direct sources are religious-hate corpora and
//! are appended with label `Re`. Pseudo sources are classified by a labeler
//! trained on the base corpus; rows predicted `NH` or below the confidence
//! threshold are dropped, the rest keep the predicted label.
//!
//! Source rows whose normalized text already appears in the base corpus or
//! in an earlier accepted row are dropped before classification.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_dataset, DatasetDescriptor, LabeledText, Origin};
use crate::encoder::{self, EncoderSpec, HyperParams, TrainedModel};
use crate::ensemble::{average_vote, majority_vote, VoteConfig, VoteMode};
use crate::error::{Error, Result};
use crate::label::{argmax, Label};
use crate::normalize::{normalize_corpus, Normalizer};

const CLASSIFY_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentPlan {
    /// Dataset keys whose rows are added as religious hate.
    pub direct_sources: Vec<String>,
    /// Dataset keys whose hate rows are pseudo-labeled.
    pub pseudo_sources: Vec<String>,
    /// Minimum top-class probability for a pseudo label.
    pub confidence_threshold: f64,
}

impl Default for AugmentPlan {
    fn default() -> Self {
        AugmentPlan {
            direct_sources: Vec::new(),
            pseudo_sources: Vec::new(),
            confidence_threshold: 0.0,
        }
    }
}

impl AugmentPlan {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::Config(format!(
                "confidence_threshold must lie in [0, 1], got {}",
                self.confidence_threshold
            )));
        }
        let direct: HashSet<&str> = self.direct_sources.iter().map(String::as_str).collect();
        if let Some(k) = self.pseudo_sources.iter().find(|k| direct.contains(k.as_str())) {
            return Err(Error::Config(format!("source {k:?} is both a direct and a pseudo source")));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.direct_sources.is_empty() && self.pseudo_sources.is_empty()
    }
}

/// Normalized rows of one external dataset.
#[derive(Debug, Clone)]
pub struct SourceRows {
    pub key: String,
    pub hate_only: bool,
    pub rows: Vec<LabeledText>,
}

impl SourceRows {
    pub fn load(descriptor: &DatasetDescriptor, normalizer: &Normalizer) -> Result<SourceRows> {
        let rows = normalize_corpus(load_dataset(descriptor)?, normalizer);
        Ok(SourceRows {
            key: descriptor.key.clone(),
            hate_only: descriptor.hate_only,
            rows,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Direct,
    Pseudo,
}

/// What happened to the rows of one source. `rows` always equals the sum
/// of `added` and the four discard counters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceTally {
    pub key: String,
    pub kind: SourceKind,
    pub rows: usize,
    pub added: BTreeMap<Label, usize>,
    pub discarded_nh: usize,
    pub discarded_low_confidence: usize,
    pub discarded_duplicates: usize,
    pub discarded_empty: usize,
}

impl SourceTally {
    fn new(key: &str, kind: SourceKind, rows: usize) -> SourceTally {
        SourceTally {
            key: key.to_string(),
            kind,
            rows,
            added: BTreeMap::new(),
            discarded_nh: 0,
            discarded_low_confidence: 0,
            discarded_duplicates: 0,
            discarded_empty: 0,
        }
    }

    pub fn added_total(&self) -> usize {
        self.added.values().sum()
    }

    pub fn reconciles(&self) -> bool {
        self.rows
            == self.added_total()
                + self.discarded_nh
                + self.discarded_low_confidence
                + self.discarded_duplicates
                + self.discarded_empty
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentReport {
    pub added_direct: usize,
    pub pseudo_counts: BTreeMap<Label, usize>,
    pub discarded_nh: usize,
    pub discarded_low_confidence: usize,
    pub discarded_duplicates: usize,
    pub discarded_empty: usize,
    pub sources: Vec<SourceTally>,
}

impl AugmentReport {
    fn record(&mut self, tally: SourceTally) {
        match tally.kind {
            SourceKind::Direct => self.added_direct += tally.added_total(),
            SourceKind::Pseudo => {
                for (l, n) in &tally.added {
                    *self.pseudo_counts.entry(*l).or_default() += n;
                }
            }
        }
        self.discarded_nh += tally.discarded_nh;
        self.discarded_low_confidence += tally.discarded_low_confidence;
        self.discarded_duplicates += tally.discarded_duplicates;
        self.discarded_empty += tally.discarded_empty;
        self.sources.push(tally);
    }

    fn absorb(&mut self, other: AugmentReport) {
        for t in other.sources {
            self.record(t);
        }
    }

    pub fn reconciles(&self) -> bool {
        self.sources.iter().all(SourceTally::reconciles)
    }
}

/// The model that assigns pseudo labels.
#[derive(Debug, Clone)]
pub enum Labeler {
    Single(TrainedModel),
    Ensemble { models: Vec<TrainedModel>, vote: VoteConfig },
}

impl Labeler {
    /// Trains on the usable rows of `base`: a voting ensemble when three or
    /// more members are configured, otherwise the first member alone.
    pub fn train(base: &[LabeledText], members: &[(EncoderSpec, HyperParams)], vote: &VoteConfig) -> Result<Labeler> {
        let train: Vec<LabeledText> = base.iter().filter(|r| r.usable_text().is_some()).cloned().collect();
        match members {
            [] => Err(Error::Config("no labeler backend configured".into())),
            [(spec, hp), ..] if members.len() < 3 => Ok(Labeler::Single(encoder::fit(spec, hp, &train)?)),
            _ => {
                let models = members
                    .par_iter()
                    .map(|(spec, hp)| encoder::fit(spec, hp, &train))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Labeler::Ensemble {
                    models,
                    vote: vote.clone(),
                })
            }
        }
    }

    /// Wraps models that are already trained: a voting ensemble from three
    /// members up, otherwise the first model.
    pub fn from_models(mut models: Vec<TrainedModel>, vote: &VoteConfig) -> Result<Labeler> {
        match models.len() {
            0 => Err(Error::Config("no trained labeler models".into())),
            1 | 2 => Ok(Labeler::Single(models.swap_remove(0))),
            _ => Ok(Labeler::Ensemble {
                models,
                vote: vote.clone(),
            }),
        }
    }

    /// Label and confidence per row. For a majority vote the confidence is
    /// the mean probability the members give the winning class.
    pub fn classify(&self, rows: &[&LabeledText]) -> Result<Vec<(Label, f64)>> {
        match self {
            Labeler::Single(model) => {
                let m = encoder::predict_matrix(model, rows)?;
                Ok(m.rows().iter().map(|p| (argmax(p), top(p))).collect())
            }
            Labeler::Ensemble { models, vote } => {
                if models.is_empty() {
                    return Err(Error::Config("labeler ensemble has no trained members".into()));
                }
                let matrices = models
                    .iter()
                    .map(|m| encoder::predict_matrix(m, rows))
                    .collect::<Result<Vec<_>>>()?;
                let weights = vote.resolved_weights(matrices.len())?;
                let (soft, mean) = average_vote(&matrices, &weights)?;
                let labels = match vote.mode {
                    VoteMode::Average => soft,
                    VoteMode::Majority => majority_vote(&matrices)?,
                };
                Ok(labels.into_iter().zip(mean.rows()).map(|(l, p)| (l, p[l.index()])).collect())
            }
        }
    }
}

fn top(p: &crate::label::ClassProbs) -> f64 {
    p.iter().copied().fold(0.0, f64::max)
}

fn usable_index(rows: &[LabeledText]) -> HashSet<String> {
    rows.iter().filter_map(|r| r.usable_text()).map(str::to_string).collect()
}

/// Splits a source into rows to keep and fills the duplicate and empty
/// counters. Rows must be normalized.
fn fresh_rows<'a>(
    source: &'a SourceRows,
    seen: &mut HashSet<String>,
    tally: &mut SourceTally,
) -> Result<Vec<&'a LabeledText>> {
    let mut keep = Vec::new();
    for row in &source.rows {
        let Some(norm) = row.norm_text.as_deref() else {
            return Err(Error::Invalid(format!("{}: row {} is not normalized", source.key, row.id)));
        };
        if norm.is_empty() {
            tally.discarded_empty += 1;
        } else if !seen.insert(norm.to_string()) {
            tally.discarded_duplicates += 1;
        } else {
            keep.push(row);
        }
    }
    Ok(keep)
}

fn external_row(row: &LabeledText, source: &str, label: Label, origin: Origin) -> LabeledText {
    let prefix = format!("{source}:");
    let id = if row.id.starts_with(&prefix) {
        row.id.clone()
    } else {
        format!("{prefix}{}", row.id)
    };
    LabeledText {
        id,
        raw_text: row.raw_text.clone(),
        label,
        source: source.to_string(),
        origin,
        norm_text: row.norm_text.clone(),
    }
}

fn direct_rows(
    sources: &[&SourceRows],
    seen: &mut HashSet<String>,
) -> Result<(Vec<LabeledText>, AugmentReport)> {
    let mut out = Vec::new();
    let mut report = AugmentReport::default();
    for source in sources {
        if !source.hate_only {
            return Err(Error::Config(format!(
                "direct source {:?} must be declared hate_only",
                source.key
            )));
        }
        let mut tally = SourceTally::new(&source.key, SourceKind::Direct, source.rows.len());
        let before = out.len();
        for row in fresh_rows(source, seen, &mut tally)? {
            out.push(external_row(row, &source.key, Label::Re, Origin::DirectMerge));
        }
        tally.added.insert(Label::Re, out.len() - before);
        report.record(tally);
    }
    Ok((out, report))
}

/// Rows of `sources` relabeled `Re`, minus those whose normalized text is
/// already in `base` (or earlier in the sources).
pub fn direct_merge(base: &[LabeledText], sources: &[&SourceRows]) -> Result<(Vec<LabeledText>, AugmentReport)> {
    direct_rows(sources, &mut usable_index(base))
}

fn pseudo_rows(
    labeler: &Labeler,
    sources: &[&SourceRows],
    threshold: f64,
    seen: &mut HashSet<String>,
) -> Result<(Vec<LabeledText>, AugmentReport)> {
    let mut out = Vec::new();
    let mut report = AugmentReport::default();
    for source in sources {
        let mut tally = SourceTally::new(&source.key, SourceKind::Pseudo, source.rows.len());
        let rows = fresh_rows(source, seen, &mut tally)?;
        let predictions: Vec<(Label, f64)> = rows
            .par_chunks(CLASSIFY_CHUNK)
            .map(|chunk| labeler.classify(chunk))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        for (row, (label, confidence)) in rows.iter().zip(predictions) {
            if label == Label::NH {
                tally.discarded_nh += 1;
            } else if confidence < threshold {
                tally.discarded_low_confidence += 1;
            } else {
                *tally.added.entry(label).or_default() += 1;
                out.push(external_row(row, &source.key, label, Origin::Pseudo));
            }
        }
        report.record(tally);
    }
    Ok((out, report))
}

/// Pseudo-labels the rows of `sources`; duplicates of `base` are dropped
/// unclassified.
pub fn pseudo_label(
    labeler: &Labeler,
    base: &[LabeledText],
    sources: &[&SourceRows],
    plan: &AugmentPlan,
) -> Result<(Vec<LabeledText>, AugmentReport)> {
    plan.validate()?;
    pseudo_rows(labeler, sources, plan.confidence_threshold, &mut usable_index(base))
}

fn pick<'a>(sources: &'a [SourceRows], keys: &[String]) -> Result<Vec<&'a SourceRows>> {
    keys.iter()
        .map(|k| {
            sources
                .iter()
                .find(|s| &s.key == k)
                .ok_or_else(|| Error::Config(format!("augmentation source {k:?} was not loaded")))
        })
        .collect()
}

/// Trains the labeler on `base`, merges direct sources, pseudo-labels the
/// rest, and returns `base` followed by the accepted rows. Gold rows are
/// passed through untouched.
pub fn build_augmented_corpus(
    base: &[LabeledText],
    sources: &[SourceRows],
    plan: &AugmentPlan,
    labeler_members: &[(EncoderSpec, HyperParams)],
    vote: &VoteConfig,
) -> Result<(Vec<LabeledText>, AugmentReport)> {
    plan.validate()?;
    let labeler = if plan.pseudo_sources.is_empty() {
        None
    } else {
        Some(Labeler::train(base, labeler_members, vote)?)
    };
    augment_with(base, sources, plan, labeler.as_ref())
}

/// Same as [`build_augmented_corpus`] with an already trained labeler,
/// which is required when the plan has pseudo sources.
pub fn augment_with(
    base: &[LabeledText],
    sources: &[SourceRows],
    plan: &AugmentPlan,
    labeler: Option<&Labeler>,
) -> Result<(Vec<LabeledText>, AugmentReport)> {
    plan.validate()?;
    let direct = pick(sources, &plan.direct_sources)?;
    let pseudo = pick(sources, &plan.pseudo_sources)?;

    let mut seen = usable_index(base);
    let (direct_out, mut report) = direct_rows(&direct, &mut seen)?;
    let mut out = base.to_vec();
    out.extend(direct_out);
    if !pseudo.is_empty() {
        let labeler = labeler.ok_or_else(|| Error::Config("pseudo sources need a trained labeler".into()))?;
        let (pseudo_out, pseudo_report) = pseudo_rows(labeler, &pseudo, plan.confidence_threshold, &mut seen)?;
        out.extend(pseudo_out);
        report.absorb(pseudo_report);
    }

    let mut ids = HashSet::new();
    if let Some(dup) = out.iter().find(|r| !ids.insert(r.id.as_str())) {
        return Err(Error::DuplicateId(dup.id.clone()));
    }
    log::info!(
        "augmentation added {} direct and {} pseudo rows",
        report.added_direct,
        report.pseudo_counts.values().sum::<usize>()
    );
    Ok((out, report))
}
