use std::path::PathBuf;

use thiserror::Error;

use crate::label::Label;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Why a model backend could not be used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unavailable {
    /// No weights directory exists for the backend.
    NotInstalled,
    /// A weights directory exists but is incomplete.
    DownloadFailed,
    /// Weights are present but no inference runtime is linked into this build.
    NoRuntime,
}

impl std::fmt::Display for Unavailable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Unavailable::NotInstalled => "not installed",
            Unavailable::DownloadFailed => "download failed or incomplete",
            Unavailable::NoRuntime => "no inference runtime linked",
        })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: label {label:?} has no mapping and is not a declared discard")]
    UnmappedLabel { path: PathBuf, label: String },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("class {label} has {count} rows, fewer than the {k} folds requested")]
    ClassTooSmall { label: Label, count: usize, k: usize },

    #[error("training set has a single class ({0}); at least two are required")]
    SingleClass(Label),

    #[error("backend {key:?} unavailable: {reason}")]
    BackendUnavailable { key: String, reason: Unavailable },

    #[error("unknown backend {0:?}")]
    UnknownBackend(String),

    #[error("non-finite parameter at index {0}")]
    NonFinite(usize),

    #[error("probability matrices are misaligned: {0}")]
    Misaligned(String),

    #[error("invalid probability row {row}: {message}")]
    InvalidProbabilities { row: usize, message: String },

    #[error("fold {fold} failed: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("every grid point failed to train")]
    AllGridPointsFailed,

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input or configuration rather than a
    /// failure while a stage was running.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Config(_)
            | Error::Invalid(_)
            | Error::UnknownBackend(_)
            | Error::Parse { .. }
            | Error::UnmappedLabel { .. } => true,
            Error::Stage { source, .. } | Error::Fold { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
