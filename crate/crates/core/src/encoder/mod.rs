//! Trainable-classifier contract.
//!
//! A backend turns normalized, labeled texts into a [`TrainedModel`] whose
//! only job is to produce five-column class probabilities. Inputs are split
//! on whitespace, truncated to `max_sequence_tokens` and padded to the
//! longest row of each inference batch; predictions never depend on the
//! padding.
//!
//! The `toy` backend is fully implemented here. The pretrained slots are
//! named so configurations can refer to them, and report precisely why they
//! cannot run when no weights or runtime are present.

pub mod toy;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::LabeledText;
use crate::ensemble::ProbabilityMatrix;
use crate::error::{Error, Result, Unavailable};
use crate::label::{ClassProbs, Label, NUM_CLASSES};

pub const TOY_BACKEND: &str = "toy";
pub const PAD_TOKEN: &str = "[PAD]";
pub const DEFAULT_MAX_SEQUENCE_TOKENS: usize = 512;
const TOY_MAX_TOKENS: usize = 4096;
const INFERENCE_BATCH: usize = 32;
const MODEL_FORMAT: &str = "arhate-model/1";

/// Environment variable naming the directory that holds pretrained weights,
/// one subdirectory per backend key.
pub const MODEL_HOME_ENV: &str = "ARHATE_MODEL_HOME";

/// A pretrained encoder slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PretrainedSlot {
    pub key: &'static str,
    pub hub_id: &'static str,
    pub max_tokens: usize,
}

pub const PRETRAINED: [PretrainedSlot; 3] = [
    PretrainedSlot {
        key: "bert-base-arabertv02-twitter",
        hub_id: "aubmindlab/bert-base-arabertv02-twitter",
        max_tokens: 512,
    },
    PretrainedSlot {
        key: "bert-large-arabertv02-twitter",
        hub_id: "aubmindlab/bert-large-arabertv02-twitter",
        max_tokens: 512,
    },
    PretrainedSlot {
        key: "MARBERT",
        hub_id: "UBC-NLP/MARBERT",
        max_tokens: 512,
    },
];

/// Keys accepted wherever a backend is named.
pub fn backend_keys() -> Vec<&'static str> {
    std::iter::once(TOY_BACKEND).chain(PRETRAINED.iter().map(|s| s.key)).collect()
}

pub fn backend_limit(key: &str) -> Result<usize> {
    if key == TOY_BACKEND {
        return Ok(TOY_MAX_TOKENS);
    }
    PRETRAINED
        .iter()
        .find(|s| s.key == key)
        .map(|s| s.max_tokens)
        .ok_or_else(|| Error::UnknownBackend(key.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl HyperParams {
    pub fn new(epochs: usize, batch_size: usize, learning_rate: f64, seed: u64) -> Result<HyperParams> {
        let hp = HyperParams {
            epochs,
            batch_size,
            learning_rate,
            seed,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

impl fmt::Display for HyperParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epochs={} batch={} lr={:e} seed={}",
            self.epochs, self.batch_size, self.learning_rate, self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub backend_key: String,
    pub max_sequence_tokens: usize,
}

impl EncoderSpec {
    /// Spec with the default sequence cap, clipped to the backend limit.
    pub fn new(backend_key: &str) -> Result<EncoderSpec> {
        EncoderSpec::with_max_tokens(backend_key, DEFAULT_MAX_SEQUENCE_TOKENS)
    }

    pub fn with_max_tokens(backend_key: &str, max_sequence_tokens: usize) -> Result<EncoderSpec> {
        let limit = backend_limit(backend_key)?;
        if max_sequence_tokens == 0 {
            return Err(Error::Config("max_sequence_tokens must be at least 1".into()));
        }
        Ok(EncoderSpec {
            backend_key: backend_key.to_string(),
            max_sequence_tokens: max_sequence_tokens.min(limit),
        })
    }
}

/// Whitespace tokens of a batch, truncated and padded to the longest row.
#[derive(Debug, Clone)]
pub struct PaddedBatch<'a> {
    tokens: Vec<Vec<&'a str>>,
    lengths: Vec<usize>,
}

impl<'a> PaddedBatch<'a> {
    pub fn new(texts: &[&'a str], max_tokens: usize) -> PaddedBatch<'a> {
        let mut tokens: Vec<Vec<&str>> = texts
            .iter()
            .map(|t| t.split_whitespace().take(max_tokens).collect())
            .collect();
        let lengths: Vec<usize> = tokens.iter().map(Vec::len).collect();
        let width = lengths.iter().copied().max().unwrap_or(0);
        for row in &mut tokens {
            row.resize(width, PAD_TOKEN);
        }
        PaddedBatch { tokens, lengths }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn width(&self) -> usize {
        self.tokens.first().map_or(0, Vec::len)
    }

    /// Padded row including pad tokens.
    pub fn padded_row(&self, i: usize) -> &[&'a str] {
        &self.tokens[i]
    }

    /// Rows with padding removed.
    pub fn rows(&self) -> impl Iterator<Item = &[&'a str]> + '_ {
        self.tokens.iter().zip(&self.lengths).map(|(t, &n)| &t[..n])
    }
}

/// Inference half of a backend.
pub trait Predictor: Send + Sync {
    fn predict_batch(&self, batch: &PaddedBatch<'_>) -> Vec<ClassProbs>;
    /// Writes the weights blob.
    fn save(&self, path: &Path) -> Result<()>;
}

#[derive(Clone)]
pub struct TrainedModel {
    pub spec: EncoderSpec,
    pub hyperparams: HyperParams,
    pub artifact: Arc<dyn Predictor>,
    pub train_fingerprint: String,
    /// Full-training-set loss after each epoch, when the backend reports it.
    pub epoch_losses: Vec<f64>,
}

impl fmt::Debug for TrainedModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TrainedModel")
            .field("spec", &self.spec)
            .field("hyperparams", &self.hyperparams)
            .field("train_fingerprint", &self.train_fingerprint)
            .finish_non_exhaustive()
    }
}

fn fingerprint(spec: &EncoderSpec, hp: &HyperParams, train: &[LabeledText]) -> String {
    let mut h = Sha256::new();
    h.update(format!(
        "{}\n{}\n{}\n{}\n{:016x}\n{}\n",
        spec.backend_key,
        spec.max_sequence_tokens,
        hp.epochs,
        hp.batch_size,
        hp.learning_rate.to_bits(),
        hp.seed
    ));
    for row in train {
        h.update(row.id.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

fn pretrained_status(slot: &PretrainedSlot) -> Unavailable {
    let Some(home) = std::env::var_os(MODEL_HOME_ENV) else {
        return Unavailable::NotInstalled;
    };
    let dir = PathBuf::from(home).join(slot.key);
    if !dir.is_dir() {
        return Unavailable::NotInstalled;
    }
    let has_weights = ["pytorch_model.bin", "model.safetensors", "tf_model.h5"]
        .iter()
        .any(|f| dir.join(f).is_file());
    if !dir.join("config.json").is_file() || !has_weights {
        return Unavailable::DownloadFailed;
    }
    Unavailable::NoRuntime
}

/// Fine-tunes a backend on normalized rows.
pub fn fit(spec: &EncoderSpec, hp: &HyperParams, train: &[LabeledText]) -> Result<TrainedModel> {
    hp.validate()?;
    let limit = backend_limit(&spec.backend_key)?;
    if spec.max_sequence_tokens == 0 || spec.max_sequence_tokens > limit {
        return Err(Error::Config(format!(
            "max_sequence_tokens {} outside 1..={limit} for {}",
            spec.max_sequence_tokens, spec.backend_key
        )));
    }
    let mut texts = Vec::with_capacity(train.len());
    for row in train {
        let text = row.usable_text().ok_or_else(|| {
            Error::Invalid(format!("training row {} is not normalized or is empty", row.id))
        })?;
        texts.push((text, row.label));
    }
    let classes: BTreeSet<Label> = train.iter().map(|r| r.label).collect();
    match classes.iter().next() {
        None => return Err(Error::EmptyCorpus),
        Some(&only) if classes.len() == 1 => return Err(Error::SingleClass(only)),
        _ => {}
    }

    if let Some(slot) = PRETRAINED.iter().find(|s| s.key == spec.backend_key) {
        return Err(Error::BackendUnavailable {
            key: slot.key.to_string(),
            reason: pretrained_status(slot),
        });
    }

    let examples: Vec<(toy::Features, Label)> = texts
        .iter()
        .map(|(text, label)| {
            let tokens: Vec<&str> = text.split_whitespace().take(spec.max_sequence_tokens).collect();
            (toy::featurize(&tokens, toy::DEFAULT_BUCKETS_LOG2), *label)
        })
        .collect();
    let trained = toy::train(&examples, hp, toy::DEFAULT_BUCKETS_LOG2)?;
    Ok(TrainedModel {
        spec: spec.clone(),
        hyperparams: *hp,
        artifact: Arc::new(trained.model),
        train_fingerprint: fingerprint(spec, hp, train),
        epoch_losses: trained.epoch_losses,
    })
}

/// Class probabilities for each text, columns in label order.
pub fn predict_proba(model: &TrainedModel, texts: &[&str]) -> Vec<ClassProbs> {
    let mut out = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(INFERENCE_BATCH) {
        let batch = PaddedBatch::new(chunk, model.spec.max_sequence_tokens);
        out.extend(model.artifact.predict_batch(&batch));
    }
    out
}

/// Predictions for corpus rows, keyed by row id.
pub fn predict_matrix(model: &TrainedModel, rows: &[&LabeledText]) -> Result<ProbabilityMatrix> {
    let texts: Vec<&str> = rows.iter().map(|r| r.model_text()).collect();
    let probs = predict_proba(model, &texts);
    ProbabilityMatrix::new(rows.iter().map(|r| r.id.clone()).collect(), probs)
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes `weights.bin` and `manifest.txt` into `dir`.
pub fn save_model(model: &TrainedModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let weights = dir.join("weights.bin");
    model.artifact.save(&weights)?;
    let losses: Vec<String> = model.epoch_losses.iter().map(|l| l.to_string()).collect();
    let hp = &model.hyperparams;
    let manifest = format!(
        "format = {MODEL_FORMAT}\n\
         backend = {}\n\
         max_sequence_tokens = {}\n\
         epochs = {}\n\
         batch_size = {}\n\
         learning_rate = {}\n\
         seed = {}\n\
         train_fingerprint = {}\n\
         epoch_losses = {}\n\
         weights = weights.bin\n\
         weights_sha256 = {}\n",
        model.spec.backend_key,
        model.spec.max_sequence_tokens,
        hp.epochs,
        hp.batch_size,
        hp.learning_rate,
        hp.seed,
        model.train_fingerprint,
        losses.join(","),
        sha256_file(&weights)?,
    );
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest).map_err(|e| Error::io(path, e))
}

/// Parses a `key = value` manifest.
pub fn read_key_values(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: "expected key = value".into(),
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn load_model(dir: &Path) -> Result<TrainedModel> {
    let manifest_path = dir.join("manifest.txt");
    let kv = read_key_values(&manifest_path)?;
    let field = |k: &str| {
        kv.get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("{}: missing {k}", manifest_path.display())))
    };
    let num = |k: &str| -> Result<u64> {
        field(k)?
            .parse()
            .map_err(|_| Error::Config(format!("{}: bad {k}", manifest_path.display())))
    };
    if field("format")? != MODEL_FORMAT {
        return Err(Error::Config(format!("{}: unsupported model format", manifest_path.display())));
    }
    let spec = EncoderSpec::with_max_tokens(field("backend")?, num("max_sequence_tokens")? as usize)?;
    let hp = HyperParams::new(
        num("epochs")? as usize,
        num("batch_size")? as usize,
        field("learning_rate")?
            .parse()
            .map_err(|_| Error::Config("bad learning_rate".into()))?,
        num("seed")?,
    )?;
    let weights = dir.join(field("weights")?);
    if sha256_file(&weights)? != field("weights_sha256")? {
        return Err(Error::Config(format!("{}: checksum mismatch", weights.display())));
    }
    if spec.backend_key != TOY_BACKEND {
        let slot = PRETRAINED.iter().find(|s| s.key == spec.backend_key).expect("validated key");
        return Err(Error::BackendUnavailable {
            key: slot.key.into(),
            reason: pretrained_status(slot),
        });
    }
    let epoch_losses = match field("epoch_losses")? {
        "" => Vec::new(),
        s => s
            .split(',')
            .map(|v| v.parse().map_err(|_| Error::Config("bad epoch_losses".into())))
            .collect::<Result<_>>()?,
    };
    Ok(TrainedModel {
        spec,
        hyperparams: hp,
        artifact: Arc::new(toy::ToyModel::load(&weights)?),
        train_fingerprint: field("train_fingerprint")?.to_string(),
        epoch_losses,
    })
}

const CACHE_HEADER: [&str; NUM_CLASSES + 1] = ["id", "p_NH", "p_GH", "p_Re", "p_Ra", "p_Se"];

/// Writes a probability cache: `id,p_NH,p_GH,p_Re,p_Ra,p_Se`.
pub fn write_probability_cache(path: &Path, m: &ProbabilityMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let io = |e: csv::Error| Error::io(path, e.into());
    w.write_record(CACHE_HEADER).map_err(io)?;
    for (id, row) in m.ids().iter().zip(m.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|p| p.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_probability_cache(path: &Path) -> Result<ProbabilityMatrix> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let headers = r.headers().map_err(|e| parse_err(1, e.to_string()))?;
    if headers.iter().ne(CACHE_HEADER) {
        return Err(parse_err(1, format!("header must be {}", CACHE_HEADER.join(","))));
    }
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let mut row = [0.0; NUM_CLASSES];
        for (c, slot) in row.iter_mut().enumerate() {
            *slot = rec[c + 1]
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("bad probability {:?}", &rec[c + 1])))?;
        }
        ids.push(rec[0].to_string());
        rows.push(row);
    }
    ProbabilityMatrix::new(ids, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_six_configurations_are_valid() {
        for (key, e, b, lr) in [
            ("bert-base-arabertv02-twitter", 4, 16, 1e-5),
            ("bert-large-arabertv02-twitter", 2, 8, 1e-5),
            ("MARBERT", 3, 8, 1e-5),
        ] {
            let spec = EncoderSpec::new(key).unwrap();
            assert_eq!(spec.max_sequence_tokens, 512);
            HyperParams::new(e, b, lr, 0).unwrap();
        }
    }

    #[test]
    fn invalid_hyperparams_rejected() {
        assert!(HyperParams::new(0, 8, 1e-5, 0).is_err());
        assert!(HyperParams::new(2, 0, 1e-5, 0).is_err());
        assert!(HyperParams::new(2, 8, 0.0, 0).is_err());
        assert!(HyperParams::new(2, 8, f64::NAN, 0).is_err());
    }

    #[test]
    fn unknown_backend_rejected() {
        assert!(matches!(EncoderSpec::new("gpt"), Err(Error::UnknownBackend(_))));
    }

    #[test]
    fn sequence_cap_is_clipped_to_backend_limit() {
        assert_eq!(EncoderSpec::with_max_tokens("MARBERT", 10_000).unwrap().max_sequence_tokens, 512);
        assert_eq!(EncoderSpec::with_max_tokens("toy", 64).unwrap().max_sequence_tokens, 64);
    }

    #[test]
    fn padding_to_longest_row() {
        let b = PaddedBatch::new(&["a b c", "d", ""], 2);
        assert_eq!(b.width(), 2);
        assert_eq!(b.padded_row(1), &["d", PAD_TOKEN]);
        let rows: Vec<&[&str]> = b.rows().collect();
        assert_eq!(rows, vec![&["a", "b"][..], &["d"][..], &[][..]]);
    }

    #[test]
    fn pretrained_backend_reports_missing_weights() {
        let rows = vec![
            LabeledText {
                norm_text: Some("نص".into()),
                ..LabeledText::gold("1", "نص", Label::NH, "t")
            },
            LabeledText {
                norm_text: Some("اخر".into()),
                ..LabeledText::gold("2", "اخر", Label::GH, "t")
            },
        ];
        let spec = EncoderSpec::new("bert-base-arabertv02-twitter").unwrap();
        let hp = HyperParams::new(4, 16, 1e-5, 0).unwrap();
        match fit(&spec, &hp, &rows) {
            Err(Error::BackendUnavailable { reason, .. }) => {
                assert!(matches!(reason, Unavailable::NotInstalled | Unavailable::DownloadFailed | Unavailable::NoRuntime))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_class_training_set_rejected() {
        let rows: Vec<LabeledText> = (0..3)
            .map(|i| LabeledText {
                norm_text: Some(format!("نص{i}")),
                ..LabeledText::gold(i.to_string(), "x", Label::NH, "t")
            })
            .collect();
        let spec = EncoderSpec::new(TOY_BACKEND).unwrap();
        let hp = HyperParams::new(1, 2, 0.1, 0).unwrap();
        assert!(matches!(fit(&spec, &hp, &rows), Err(Error::SingleClass(Label::NH))));
    }
}
