//! C ABI over the arhate core.
//!
//! Every fallible call returns an [`ArhateStatus`]; on failure the message
//! is available from [`arhate_last_error`] on the same thread. Handles are
//! opaque pointers released with their matching `_free` function. Strings
//! returned to the caller are released with [`arhate_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use arhate::corpus::{load_dataset, DatasetDescriptor, Format};
use arhate::encoder::{self, EncoderSpec, HyperParams, TrainedModel};
use arhate::ensemble::{average_vote, majority_vote, ProbabilityMatrix};
use arhate::evaluate::{aggregate, per_class_metrics, ConfusionMatrix};
use arhate::normalize::{normalize_corpus, NormalizationConfig, Normalizer};
use arhate::{Error, NUM_CLASSES};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArhateStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    Training = 6,
    BackendUnavailable = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArhateVoteMode {
    Majority = 0,
    Average = 1,
}

/// Precision, recall and F1 of one class, as fractions.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ArhateClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ArhateAggregates {
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub weighted_f1: f64,
}

/// Opaque text normalizer.
pub struct ArhateNormalizer(Normalizer);

/// Opaque trained model.
pub struct ArhateModel(TrainedModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ArhateStatus {
    match e {
        Error::Io { .. } => ArhateStatus::Io,
        Error::Parse { .. } | Error::UnmappedLabel { .. } | Error::DuplicateId(_) => ArhateStatus::Parse,
        Error::Config(_) | Error::UnknownBackend(_) => ArhateStatus::Config,
        Error::BackendUnavailable { .. } => ArhateStatus::BackendUnavailable,
        Error::EmptyCorpus | Error::SingleClass(_) | Error::NonFinite(_) | Error::AllGridPointsFailed => {
            ArhateStatus::Training
        }
        Error::Fold { source, .. } | Error::Stage { source, .. } => status_of(source),
        _ => ArhateStatus::InvalidArgument,
    }
}

/// Failure carried out of a call body before it is turned into a status.
struct Fail(ArhateStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Fail {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(name: &str) -> Fail {
    Fail(ArhateStatus::NullArgument, format!("{name} is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> ArhateStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ArhateStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            ArhateStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(ArhateStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn opt_path(p: *const c_char, name: &str) -> Result<Option<PathBuf>, Fail> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(|s| Some(PathBuf::from(s)))
    }
}

unsafe fn write_out<T>(out: *mut T, value: T, name: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(name));
    }
    out.write(value);
    Ok(())
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', "")).unwrap_or_default().into_raw()
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn arhate_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn arhate_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn arhate_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a normalizer. `stopword_path` may be NULL for no stopwords.
///
/// # Safety
/// `stopword_path` is NULL or a valid C string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn arhate_normalizer_new(
    stopword_path: *const c_char,
    strip_non_arabic: bool,
    out: *mut *mut ArhateNormalizer,
) -> ArhateStatus {
    guard(|| {
        let cfg = NormalizationConfig {
            stopword_path: opt_path(stopword_path, "stopword_path")?,
            strip_non_arabic,
            ..Default::default()
        };
        let n = Normalizer::new(&cfg)?;
        write_out(out, Box::into_raw(Box::new(ArhateNormalizer(n))), "out")
    })
}

/// Normalizes `text` into a new string owned by the caller.
///
/// # Safety
/// `normalizer` is a live handle, `text` a valid C string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn arhate_normalize(
    normalizer: *const ArhateNormalizer,
    text: *const c_char,
    out: *mut *mut c_char,
) -> ArhateStatus {
    guard(|| {
        let n = normalizer.as_ref().ok_or_else(|| null("normalizer"))?;
        let text = str_arg(text, "text")?;
        write_out(out, into_c_string(n.0.normalize(text)), "out")
    })
}

/// # Safety
/// `normalizer` is NULL or a handle from [`arhate_normalizer_new`].
#[no_mangle]
pub unsafe extern "C" fn arhate_normalizer_free(normalizer: *mut ArhateNormalizer) {
    if !normalizer.is_null() {
        drop(Box::from_raw(normalizer));
    }
}

/// Per-class scores and aggregates from a 5x5 row-major confusion matrix
/// (rows gold, columns predicted, label order NH GH Re Ra Se).
///
/// # Safety
/// `counts` holds 25 values, `per_class` has room for 5 entries and
/// `aggregates` is writable. Either output may be NULL to skip it.
#[no_mangle]
pub unsafe extern "C" fn arhate_metrics(
    counts: *const u64,
    per_class: *mut ArhateClassScores,
    aggregates: *mut ArhateAggregates,
) -> ArhateStatus {
    guard(|| {
        if counts.is_null() {
            return Err(null("counts"));
        }
        let flat = std::slice::from_raw_parts(counts, NUM_CLASSES * NUM_CLASSES);
        let mut cm = ConfusionMatrix::default();
        for (i, v) in flat.iter().enumerate() {
            cm.counts[i / NUM_CLASSES][i % NUM_CLASSES] = *v;
        }
        let scores = per_class_metrics(&cm);
        if !per_class.is_null() {
            for (c, s) in scores.iter().enumerate() {
                per_class.add(c).write(ArhateClassScores {
                    precision: s.precision,
                    recall: s.recall,
                    f1: s.f1,
                });
            }
        }
        if !aggregates.is_null() {
            let a = aggregate(&scores, &cm.supports());
            aggregates.write(ArhateAggregates {
                macro_f1: a.macro_f1,
                micro_f1: a.micro_f1,
                weighted_f1: a.weighted_f1,
            });
        }
        Ok(())
    })
}

/// Combines `models` probability matrices of `rows` x 5, laid out model
/// after model, row-major. `weights` (length `models`) applies to average
/// voting and may be NULL for uniform. Writes one label index per row.
///
/// # Safety
/// `probs` holds `models * rows * 5` values and `labels_out` has room for
/// `rows` entries.
#[no_mangle]
pub unsafe extern "C" fn arhate_vote(
    mode: ArhateVoteMode,
    probs: *const f64,
    models: usize,
    rows: usize,
    weights: *const f64,
    labels_out: *mut u32,
) -> ArhateStatus {
    guard(|| {
        if probs.is_null() {
            return Err(null("probs"));
        }
        if labels_out.is_null() {
            return Err(null("labels_out"));
        }
        let flat = std::slice::from_raw_parts(probs, models * rows * NUM_CLASSES);
        let ids: Vec<String> = (0..rows).map(|r| r.to_string()).collect();
        let matrices = flat
            .chunks(rows * NUM_CLASSES)
            .take(models)
            .map(|m| {
                let rows = m
                    .chunks(NUM_CLASSES)
                    .map(|r| std::array::from_fn(|c| r[c]))
                    .collect();
                ProbabilityMatrix::new(ids.clone(), rows)
            })
            .collect::<arhate::Result<Vec<_>>>()?;
        let labels = match mode {
            ArhateVoteMode::Majority => majority_vote(&matrices)?,
            ArhateVoteMode::Average => {
                let w = if weights.is_null() {
                    vec![1.0; models]
                } else {
                    std::slice::from_raw_parts(weights, models).to_vec()
                };
                average_vote(&matrices, &w)?.0
            }
        };
        for (i, l) in labels.iter().enumerate() {
            labels_out.add(i).write(l.index() as u32);
        }
        Ok(())
    })
}

/// Loads a model directory written by the CLI or [`arhate_model_save`].
///
/// # Safety
/// `dir` is a valid C string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn arhate_model_load(dir: *const c_char, out: *mut *mut ArhateModel) -> ArhateStatus {
    guard(|| {
        let dir = str_arg(dir, "dir")?;
        let model = encoder::load_model(dir.as_ref())?;
        write_out(out, Box::into_raw(Box::new(ArhateModel(model))), "out")
    })
}

/// Trains `backend` on a JSONL file of `id`, `text`, `label` rows. Texts
/// go through `normalizer` (NULL means the default rules without
/// stopwords).
///
/// # Safety
/// Pointers are valid C strings or handles as documented; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn arhate_model_fit(
    backend: *const c_char,
    corpus_path: *const c_char,
    normalizer: *const ArhateNormalizer,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    seed: u64,
    out: *mut *mut ArhateModel,
) -> ArhateStatus {
    guard(|| {
        let spec = EncoderSpec::new(str_arg(backend, "backend")?)?;
        let hp = HyperParams::new(epochs, batch_size, learning_rate, seed)?;
        let path = PathBuf::from(str_arg(corpus_path, "corpus_path")?);
        let rows = load_dataset(&DatasetDescriptor {
            key: "ffi".into(),
            path,
            format: Format::Jsonl,
            label_map: Default::default(),
            hate_only: false,
        })?;
        let default;
        let n = match normalizer.as_ref() {
            Some(n) => &n.0,
            None => {
                default = Normalizer::new(&NormalizationConfig::default())?;
                &default
            }
        };
        let rows: Vec<_> = normalize_corpus(rows, n)
            .into_iter()
            .filter(|r| r.usable_text().is_some())
            .collect();
        let model = encoder::fit(&spec, &hp, &rows)?;
        write_out(out, Box::into_raw(Box::new(ArhateModel(model))), "out")
    })
}

/// # Safety
/// `model` is a live handle and `dir` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn arhate_model_save(model: *const ArhateModel, dir: *const c_char) -> ArhateStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        encoder::save_model(&m.0, str_arg(dir, "dir")?.as_ref())?;
        Ok(())
    })
}

/// Class probabilities for `count` already normalized texts; writes
/// `count * 5` values, row-major in label order.
///
/// # Safety
/// `texts` holds `count` valid C strings and `probs_out` has room for
/// `count * 5` values.
#[no_mangle]
pub unsafe extern "C" fn arhate_model_predict_proba(
    model: *const ArhateModel,
    texts: *const *const c_char,
    count: usize,
    probs_out: *mut f64,
) -> ArhateStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if count > 0 && (texts.is_null() || probs_out.is_null()) {
            return Err(null("texts or probs_out"));
        }
        let texts = (0..count)
            .map(|i| str_arg(*texts.add(i), "texts[i]"))
            .collect::<Result<Vec<_>, _>>()?;
        for (i, row) in encoder::predict_proba(&m.0, &texts).iter().enumerate() {
            for (c, p) in row.iter().enumerate() {
                probs_out.add(i * NUM_CLASSES + c).write(*p);
            }
        }
        Ok(())
    })
}

/// # Safety
/// `model` is NULL or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn arhate_model_free(model: *mut ArhateModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
