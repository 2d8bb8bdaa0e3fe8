//! Experiment configuration: one TOML file with a section per stage.
//!
//! Relative paths resolve against the config file's directory. Only the
//! `[paths]` section may be overridden from the environment.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentPlan;
use crate::corpus::Registry;
use crate::encoder::{EncoderSpec, HyperParams, DEFAULT_MAX_SEQUENCE_TOKENS};
use crate::ensemble::VoteConfig;
use crate::error::{Error, Result};
use crate::evaluate::DEFAULT_FOLDS;
use crate::normalize::NormalizationConfig;
use crate::tune::SearchGrid;

pub const ENV_DATA: &str = "ARHATE_DATA";
pub const ENV_STOPWORDS: &str = "ARHATE_STOPWORDS";
pub const ENV_REGISTRY: &str = "ARHATE_REGISTRY";
pub const ENV_RUNS_DIR: &str = "ARHATE_RUNS_DIR";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Base corpus as JSONL (`id`, `text`, `label`, `source`). Used when
    /// `corpus.datasets` is empty.
    pub data: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub runs_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Registry keys merged into the base corpus.
    pub datasets: Vec<String>,
    pub dedup: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            datasets: Vec::new(),
            dedup: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizeSection {
    pub repeat_collapse_len: usize,
    pub strip_non_arabic: bool,
}

impl Default for NormalizeSection {
    fn default() -> Self {
        let d = NormalizationConfig::default();
        NormalizeSection {
            repeat_collapse_len: d.repeat_collapse_len,
            strip_non_arabic: d.strip_non_arabic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberConfig {
    pub backend: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Defaults to the run seed plus the member's position.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub max_sequence_tokens: usize,
    #[serde(rename = "member")]
    pub members: Vec<MemberConfig>,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            max_sequence_tokens: DEFAULT_MAX_SEQUENCE_TOKENS,
            members: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSection {
    pub enabled: bool,
    pub grid: Option<SearchGrid>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub enabled: bool,
    pub direct_sources: Vec<String>,
    pub pseudo_sources: Vec<String>,
    pub confidence_threshold: f64,
}

impl AugmentSection {
    pub fn plan(&self) -> AugmentPlan {
        AugmentPlan {
            direct_sources: self.direct_sources.clone(),
            pseudo_sources: self.pseudo_sources.clone(),
            confidence_threshold: self.confidence_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub folds: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection { folds: DEFAULT_FOLDS }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub corpus: CorpusConfig,
    pub normalize: NormalizeSection,
    pub encoder: EncoderSection,
    pub tune: TuneSection,
    pub ensemble: VoteConfig,
    pub augment: AugmentSection,
    pub evaluate: EvaluateSection,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads, applies environment overrides, resolves paths and validates.
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg =
            ExperimentConfig::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.apply_env(|k| std::env::var_os(k).map(PathBuf::from));
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<PathBuf>) {
        let p = &mut self.paths;
        for (key, slot) in [
            (ENV_DATA, &mut p.data),
            (ENV_STOPWORDS, &mut p.stopwords),
            (ENV_REGISTRY, &mut p.registry),
            (ENV_RUNS_DIR, &mut p.runs_dir),
        ] {
            if let Some(v) = var(key) {
                *slot = Some(v);
            }
        }
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for slot in [&mut p.data, &mut p.registry, &mut p.stopwords, &mut p.runs_dir] {
            resolve(base, slot);
        }
    }

    pub fn normalization(&self) -> NormalizationConfig {
        NormalizationConfig {
            stopword_path: self.paths.stopwords.clone(),
            repeat_collapse_len: self.normalize.repeat_collapse_len,
            strip_non_arabic: self.normalize.strip_non_arabic,
        }
    }

    /// Encoder spec and hyperparameters of every member.
    pub fn members(&self) -> Result<Vec<(EncoderSpec, HyperParams)>> {
        self.encoder
            .members
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let spec = EncoderSpec::with_max_tokens(&m.backend, self.encoder.max_sequence_tokens)?;
                let seed = m.seed.unwrap_or(self.seed.wrapping_add(i as u64));
                let hp = HyperParams::new(m.epochs, m.batch_size, m.learning_rate, seed)?;
                Ok((spec, hp))
            })
            .collect()
    }

    pub fn search_grid(&self) -> SearchGrid {
        self.tune.grid.clone().unwrap_or_default()
    }

    /// Schema checks that need no data files.
    pub fn validate(&self) -> Result<()> {
        if self.encoder.members.is_empty() {
            return Err(Error::Config("encoder needs at least one [[encoder.member]]".into()));
        }
        self.members()?;
        if self.normalize.repeat_collapse_len == 0 {
            return Err(Error::Config("normalize.repeat_collapse_len must be at least 1".into()));
        }
        if self.evaluate.folds < 2 {
            return Err(Error::Config("evaluate.folds must be at least 2".into()));
        }
        if self.encoder.members.len() > 1 {
            self.ensemble.resolved_weights(self.encoder.members.len())?;
        }
        if self.tune.enabled {
            self.search_grid().validate()?;
        }
        if self.corpus.datasets.is_empty() && self.paths.data.is_none() {
            return Err(Error::Config("set paths.data or corpus.datasets".into()));
        }
        let needs_registry = !self.corpus.datasets.is_empty() || (self.augment.enabled && !self.augment.plan().is_empty());
        if needs_registry && self.paths.registry.is_none() {
            return Err(Error::Config("paths.registry is required to resolve dataset keys".into()));
        }
        if self.augment.enabled {
            self.augment.plan().validate()?;
        }
        Ok(())
    }

    pub fn registry(&self) -> Result<Registry> {
        match &self.paths.registry {
            Some(p) => Registry::load(p),
            None => Ok(Registry::default()),
        }
    }
}
