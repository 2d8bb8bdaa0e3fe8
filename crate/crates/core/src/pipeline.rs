//! End-to-end experiment runs with resumable stages.
//!
//! A run directory holds one file set per stage plus a marker in `stages/`
//! listing the stage's outputs and their hashes. A stage is skipped when its
//! marker is present and every listed output still matches; once a stage
//! runs, every later stage runs too.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{augment_with, Labeler, SourceRows};
use crate::config::ExperimentConfig;
use crate::corpus::{self, read_corpus, write_corpus, DatasetDescriptor, Format, LabeledText};
use crate::encoder::{self, read_key_values, EncoderSpec, HyperParams};
use crate::error::{Error, Result};
use crate::evaluate::{cross_validate_detailed, stratified_folds, EnsembleRecipe, ModelRecipe, SingleModel};
use crate::normalize::{normalize_corpus, Normalizer};
use crate::report::{self, Baselines, RunArtifacts};
use crate::tune::{cv_search, write_trace_csv, SearchTrace};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";
pub const STAGES_DIR: &str = "stages";

const CORPUS_FILE: &str = "corpus.jsonl";
const NORMALIZED_FILE: &str = "normalized.jsonl";
const AUGMENTED_FILE: &str = "augmented.jsonl";
const TUNED_FILE: &str = "tuned.json";
const FOLDS_FILE: &str = "folds.json";
const PREDICTIONS_FILE: &str = "predictions.csv";
const REPORT_FILE: &str = "report.md";
const MODELS_DIR: &str = "models";

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub outputs: Vec<OutputRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendIdentity {
    pub backend: String,
    pub max_sequence_tokens: usize,
    pub hyperparams: HyperParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub dataset_hashes: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopword_hash: Option<String>,
    pub backends: Vec<BackendIdentity>,
    /// Cross-validation protocol used by tuning and evaluation.
    pub protocol: String,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub run_id: String,
    pub executed: Vec<String>,
    pub skipped: Vec<String>,
}

/// Input files the run depends on, keyed by role.
fn input_files(cfg: &ExperimentConfig) -> Result<BTreeMap<String, PathBuf>> {
    let mut files = BTreeMap::new();
    if let Some(p) = &cfg.paths.stopwords {
        files.insert("stopwords".to_string(), p.clone());
    }
    if cfg.corpus.datasets.is_empty() {
        if let Some(p) = &cfg.paths.data {
            files.insert("data".to_string(), p.clone());
        }
    }
    let registry = cfg.registry()?;
    let mut keys: Vec<&String> = cfg.corpus.datasets.iter().collect();
    if cfg.augment.enabled {
        keys.extend(cfg.augment.direct_sources.iter().chain(&cfg.augment.pseudo_sources));
    }
    for k in keys {
        files.insert(format!("dataset:{k}"), registry.get(k)?.path.clone());
    }
    Ok(files)
}

fn run_id(cfg: &ExperimentConfig, hashes: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg).expect("serializable config"));
    for (k, v) in hashes {
        h.update(format!("\n{k}={v}"));
    }
    hex::encode(h.finalize())[..16].to_string()
}

struct Runner {
    dir: PathBuf,
    dirty: bool,
    manifest: RunManifest,
    outcome_executed: Vec<String>,
    outcome_skipped: Vec<String>,
}

impl Runner {
    fn marker(&self, name: &str) -> PathBuf {
        self.dir.join(STAGES_DIR).join(format!("{name}.json"))
    }

    fn marker_valid(&self, name: &str) -> Option<StageRecord> {
        let rec: StageRecord = read_json(&self.marker(name)).ok()?;
        let intact = rec.status == StageStatus::Complete
            && rec
                .outputs
                .iter()
                .all(|o| sha256_file(&self.dir.join(&o.path)).map(|h| h == o.sha256).unwrap_or(false));
        intact.then_some(rec)
    }

    fn record(&mut self, rec: StageRecord) -> Result<()> {
        self.manifest.stages.retain(|s| s.name != rec.name);
        self.manifest.stages.push(rec);
        write_json(&self.dir.join(MANIFEST_FILE), &self.manifest)
    }

    fn stage(&mut self, name: &str, outputs: &[String], body: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        if !self.dirty {
            if let Some(rec) = self.marker_valid(name) {
                log::info!("stage {name}: up to date");
                self.outcome_skipped.push(name.to_string());
                return self.record(rec);
            }
        }
        log::info!("stage {name}: running");
        self.dirty = true;
        let marker = self.marker(name);
        let _ = fs::remove_file(&marker);
        if let Err(e) = body(&self.dir) {
            let rec = StageRecord {
                name: name.to_string(),
                status: StageStatus::Failed,
                outputs: Vec::new(),
                error: Some(e.to_string()),
            };
            write_json(&marker, &rec)?;
            self.record(rec)?;
            return Err(Error::Stage {
                stage: name.to_string(),
                source: Box::new(e),
            });
        }
        let outputs = outputs
            .iter()
            .map(|p| {
                Ok(OutputRecord {
                    path: p.clone(),
                    sha256: sha256_file(&self.dir.join(p))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let rec = StageRecord {
            name: name.to_string(),
            status: StageStatus::Complete,
            outputs,
            error: None,
        };
        write_json(&marker, &rec)?;
        self.outcome_executed.push(name.to_string());
        self.record(rec)
    }
}

fn load_base(cfg: &ExperimentConfig) -> Result<Vec<LabeledText>> {
    if cfg.corpus.datasets.is_empty() {
        let path = cfg.paths.data.clone().ok_or_else(|| Error::Config("paths.data is not set".into()))?;
        let key = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "data".into());
        return corpus::load_dataset(&DatasetDescriptor {
            key,
            path,
            format: Format::Jsonl,
            label_map: BTreeMap::new(),
            hate_only: false,
        });
    }
    let registry = cfg.registry()?;
    let parts = cfg
        .corpus
        .datasets
        .iter()
        .map(|k| corpus::load_dataset(registry.get(k)?))
        .collect::<Result<Vec<_>>>()?;
    if parts.len() == 1 {
        Ok(parts.into_iter().next().unwrap_or_default())
    } else {
        corpus::merge(&parts, false)
    }
}

/// Keeps the first row of every normalized text; flagged-empty rows are
/// never treated as duplicates.
fn dedup_rows(rows: Vec<LabeledText>) -> Vec<LabeledText> {
    let mut seen = HashSet::new();
    let before = rows.len();
    let out: Vec<LabeledText> = rows
        .into_iter()
        .filter(|r| r.usable_text().map(|t| seen.insert(t.to_string())).unwrap_or(true))
        .collect();
    if out.len() < before {
        log::info!("dropped {} duplicate rows", before - out.len());
    }
    out
}

fn member_dir(i: usize) -> String {
    format!("{MODELS_DIR}/member-{i}")
}

fn recipe_for(members: &[(EncoderSpec, HyperParams)], cfg: &ExperimentConfig) -> Box<dyn ModelRecipe> {
    if members.len() == 1 {
        Box::new(SingleModel {
            spec: members[0].0.clone(),
            hp: members[0].1,
        })
    } else {
        Box::new(EnsembleRecipe {
            members: members.to_vec(),
            vote: cfg.ensemble.clone(),
        })
    }
}

/// Tuned hyperparameters when tuning ran, otherwise the configured ones.
fn effective_members(dir: &Path, cfg: &ExperimentConfig) -> Result<Vec<(EncoderSpec, HyperParams)>> {
    let members = cfg.members()?;
    if !cfg.tune.enabled {
        return Ok(members);
    }
    let tuned: Vec<HyperParams> = read_json(&dir.join(TUNED_FILE))?;
    if tuned.len() != members.len() {
        return Err(Error::Invalid(format!("{TUNED_FILE} does not match the configured members")));
    }
    Ok(members.into_iter().zip(tuned).map(|((s, _), hp)| (s, hp)).collect())
}

/// Runs (or resumes) the experiment described by `config_path`.
pub fn run_experiment(config_path: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
        cfg.validate()?;
    }
    run_with_config(cfg, opts.out.clone())
}

pub fn run_with_config(cfg: ExperimentConfig, out: Option<PathBuf>) -> Result<RunOutcome> {
    cfg.validate()?;
    let inputs = input_files(&cfg)?;
    let mut hashes = BTreeMap::new();
    for (k, p) in &inputs {
        hashes.insert(k.clone(), sha256_file(p)?);
    }
    let id = run_id(&cfg, &hashes);
    let dir = out.unwrap_or_else(|| cfg.paths.runs_dir.clone().unwrap_or_else(|| PathBuf::from("runs")).join(&id));
    fs::create_dir_all(dir.join(STAGES_DIR)).map_err(|e| Error::io(&dir, e))?;
    let normalizer = Normalizer::new(&cfg.normalization())?;

    let mut stopword_hash = normalizer.stopword_hash().map(str::to_string);
    if stopword_hash.is_none() {
        stopword_hash = hashes.get("stopwords").cloned();
    }
    let prior: Option<RunManifest> = read_json(&dir.join(MANIFEST_FILE)).ok();
    let mut runner = Runner {
        dir: dir.clone(),
        dirty: prior.as_ref().map(|m| m.run_id != id).unwrap_or(false),
        manifest: RunManifest {
            run_id: id.clone(),
            tool_version: TOOL_VERSION.to_string(),
            seed: cfg.seed,
            config: cfg.clone(),
            dataset_hashes: hashes,
            stopword_hash,
            backends: cfg
                .members()?
                .into_iter()
                .map(|(s, hp)| BackendIdentity {
                    backend: s.backend_key,
                    max_sequence_tokens: s.max_sequence_tokens,
                    hyperparams: hp,
                    weights_sha256: None,
                })
                .collect(),
            protocol: format!("stratified {}-fold cross-validation, seed {}", cfg.evaluate.folds, cfg.seed),
            stages: Vec::new(),
        },
        outcome_executed: Vec::new(),
        outcome_skipped: Vec::new(),
    };
    if runner.dirty {
        log::warn!("{} holds a different run; every stage will rerun", dir.display());
    }

    runner.stage("ingest", &[CORPUS_FILE.into(), report::STATS_FILE.into()], |d| {
        let rows = load_base(&cfg)?;
        write_json(&d.join(report::STATS_FILE), &corpus::compute_stats(&rows)?)?;
        write_corpus(&d.join(CORPUS_FILE), &rows)
    })?;

    runner.stage("normalize", &[NORMALIZED_FILE.into()], |d| {
        let mut rows = normalize_corpus(read_corpus(&d.join(CORPUS_FILE))?, &normalizer);
        if cfg.corpus.dedup {
            rows = dedup_rows(rows);
        }
        write_corpus(&d.join(NORMALIZED_FILE), &rows)
    })?;

    if cfg.tune.enabled {
        let backends: Vec<String> = {
            let mut seen = Vec::new();
            for m in &cfg.encoder.members {
                if !seen.contains(&m.backend) {
                    seen.push(m.backend.clone());
                }
            }
            seen
        };
        let mut outputs = vec![TUNED_FILE.to_string(), report::TRACE_FILE.to_string()];
        outputs.extend(backends.iter().map(|b| format!("tune_trace_{b}.csv")));
        runner.stage("tune", &outputs, |d| {
            let rows = read_corpus(&d.join(NORMALIZED_FILE))?;
            let plan = stratified_folds(&rows, cfg.evaluate.folds, cfg.seed)?;
            let members = cfg.members()?;
            let mut grid = cfg.search_grid();
            let mut traces: BTreeMap<String, Vec<SearchTrace>> = BTreeMap::new();
            let mut best: BTreeMap<String, HyperParams> = BTreeMap::new();
            for b in &backends {
                let (spec, hp) = members.iter().find(|(s, _)| &s.backend_key == b).expect("backend has a member");
                grid.initial.seed = hp.seed;
                let (winner, trace) = cv_search(spec, &grid, &rows, &plan)?;
                write_trace_csv(&d.join(format!("tune_trace_{b}.csv")), &trace)?;
                traces.insert(b.clone(), trace);
                best.insert(b.clone(), winner);
            }
            let tuned: Vec<HyperParams> = members
                .iter()
                .map(|(s, hp)| HyperParams {
                    seed: hp.seed,
                    ..best[&s.backend_key]
                })
                .collect();
            write_json(&d.join(report::TRACE_FILE), &traces)?;
            write_json(&d.join(TUNED_FILE), &tuned)
        })?;
    }

    let member_count = cfg.encoder.members.len();
    let model_outputs: Vec<String> = (0..member_count)
        .flat_map(|i| [format!("{}/manifest.txt", member_dir(i)), format!("{}/weights.bin", member_dir(i))])
        .collect();
    runner.stage("train", &model_outputs, |d| {
        let rows: Vec<LabeledText> = read_corpus(&d.join(NORMALIZED_FILE))?
            .into_iter()
            .filter(|r| r.usable_text().is_some())
            .collect();
        for (i, (spec, hp)) in effective_members(d, &cfg)?.iter().enumerate() {
            let model = encoder::fit(spec, hp, &rows)?;
            encoder::save_model(&model, &d.join(member_dir(i)))?;
        }
        Ok(())
    })?;
    for (i, b) in runner.manifest.backends.iter_mut().enumerate() {
        let kv = read_key_values(&dir.join(member_dir(i)).join("manifest.txt"))?;
        b.weights_sha256 = kv.get("weights_sha256").cloned();
    }
    if cfg.tune.enabled {
        for (b, (_, hp)) in runner.manifest.backends.iter_mut().zip(effective_members(&dir, &cfg)?) {
            b.hyperparams = hp;
        }
    }

    let plan = cfg.augment.plan();
    let augmenting = cfg.augment.enabled && !plan.is_empty();
    if augmenting {
        runner.stage("augment", &[AUGMENTED_FILE.into(), report::AUGMENT_REPORT_FILE.into()], |d| {
            let base = read_corpus(&d.join(NORMALIZED_FILE))?;
            let registry = cfg.registry()?;
            let sources = plan
                .direct_sources
                .iter()
                .chain(&plan.pseudo_sources)
                .map(|k| SourceRows::load(registry.get(k)?, &normalizer))
                .collect::<Result<Vec<_>>>()?;
            let labeler = if plan.pseudo_sources.is_empty() {
                None
            } else {
                let models = (0..member_count)
                    .map(|i| encoder::load_model(&d.join(member_dir(i))))
                    .collect::<Result<Vec<_>>>()?;
                Some(Labeler::from_models(models, &cfg.ensemble)?)
            };
            let (rows, report) = augment_with(&base, &sources, &plan, labeler.as_ref())?;
            write_json(&d.join(report::AUGMENT_REPORT_FILE), &report)?;
            write_corpus(&d.join(AUGMENTED_FILE), &rows)
        })?;
    }

    runner.stage(
        "evaluate",
        &[report::METRICS_FILE.into(), FOLDS_FILE.into(), PREDICTIONS_FILE.into()],
        |d| {
            let rows = read_corpus(&d.join(if augmenting { AUGMENTED_FILE } else { NORMALIZED_FILE }))?;
            let plan = stratified_folds(&rows, cfg.evaluate.folds, cfg.seed)?;
            let members = effective_members(d, &cfg)?;
            let recipe = recipe_for(&members, &cfg);
            let mut outcome = cross_validate_detailed(&rows, recipe.as_ref(), &plan)?;
            outcome.report.config_hash = Some(id.clone());
            write_json(&d.join(FOLDS_FILE), &plan)?;
            write_predictions(&d.join(PREDICTIONS_FILE), &outcome.predictions)?;
            write_json(&d.join(report::METRICS_FILE), &outcome.report)
        },
    )?;

    runner.stage("report", &[REPORT_FILE.into()], |d| {
        let mut run = RunArtifacts::load(d)?;
        run.name = id.clone();
        let text = report::render(&[run], &Baselines::bundled(), report::Format::Markdown);
        fs::write(d.join(REPORT_FILE), text).map_err(|e| Error::io(d.join(REPORT_FILE), e))
    })?;

    write_json(&dir.join(MANIFEST_FILE), &runner.manifest)?;
    Ok(RunOutcome {
        dir,
        run_id: id,
        executed: runner.outcome_executed,
        skipped: runner.outcome_skipped,
    })
}

pub fn write_predictions(path: &Path, preds: &[crate::evaluate::HeldOutPrediction]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let io = |e: csv::Error| Error::io(path, e.into());
    w.write_record(["id", "fold", "gold", "predicted"]).map_err(io)?;
    for p in preds {
        w.write_record([p.id.as_str(), &p.fold.to_string(), p.gold.as_str(), p.predicted.as_str()])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
