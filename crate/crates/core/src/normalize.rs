//! Cleaning and letter normalization for Arabic social-media text.
//!
//! Rules run in a fixed order:
//!
//! 1. remove URLs, `@mentions`, the standalone token `RT`; turn `#`,
//!    punctuation, symbols/emoji and digits into spaces;
//! 2. remove harakat, shadda, sukun, other combining marks and tatweel;
//! 3. collapse runs of one character longer than `repeat_collapse_len`;
//! 4. unify letters: alef with hamza above/below or madda to bare alef,
//!    ta marbuta to ha, alef maqsura to ya;
//! 5. drop non-Arabic letters (when `strip_non_arabic`), then collapse runs
//!    again since steps 4 and 5 can create new ones;
//! 6. drop stopwords (exact token match, list normalized with steps 1-5);
//! 7. collapse whitespace to single spaces and trim.
//!
//! Input is brought to NFKC first so presentation forms and fullwidth
//! characters reach the rules in their canonical shape.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::corpus::LabeledText;
use crate::error::{Error, Result};

const TATWEEL: char = '\u{0640}';
const ALEF: char = '\u{0627}';

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizationConfig {
    /// One stopword per line. `None` disables stopword removal.
    pub stopword_path: Option<PathBuf>,
    pub repeat_collapse_len: usize,
    pub strip_non_arabic: bool,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        NormalizationConfig {
            stopword_path: None,
            repeat_collapse_len: 2,
            strip_non_arabic: true,
        }
    }
}

/// A loaded, read-only normalization setup.
#[derive(Debug, Clone)]
pub struct Normalizer {
    repeat_collapse_len: usize,
    strip_non_arabic: bool,
    stopwords: HashSet<String>,
    stopword_hash: Option<String>,
}

impl Normalizer {
    pub fn new(cfg: &NormalizationConfig) -> Result<Normalizer> {
        match &cfg.stopword_path {
            None => Normalizer::with_stopwords(cfg, std::iter::empty::<&str>()),
            Some(path) => {
                let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
                let text = String::from_utf8(bytes.clone())
                    .map_err(|_| Error::Config(format!("{}: stopword file is not UTF-8", path.display())))?;
                let mut n = Normalizer::with_stopwords(cfg, text.lines())?;
                n.stopword_hash = Some(hex::encode(Sha256::digest(&bytes)));
                Ok(n)
            }
        }
    }

    pub fn with_stopwords<'a>(cfg: &NormalizationConfig, words: impl IntoIterator<Item = &'a str>) -> Result<Normalizer> {
        if cfg.repeat_collapse_len == 0 {
            return Err(Error::Config("repeat_collapse_len must be at least 1".into()));
        }
        let mut n = Normalizer {
            repeat_collapse_len: cfg.repeat_collapse_len,
            strip_non_arabic: cfg.strip_non_arabic,
            stopwords: HashSet::new(),
            stopword_hash: None,
        };
        let mut stopwords = HashSet::new();
        for w in words {
            let w = w.trim();
            if w.is_empty() || w.starts_with('#') {
                continue;
            }
            let normed = n.clean(w);
            if normed.contains(' ') {
                log::warn!("stopword {w:?} normalizes to several tokens and can never match");
            } else if !normed.is_empty() {
                stopwords.insert(normed);
            }
        }
        n.stopwords = stopwords;
        Ok(n)
    }

    /// SHA-256 of the stopword file, when one was loaded.
    pub fn stopword_hash(&self) -> Option<&str> {
        self.stopword_hash.as_deref()
    }

    pub fn stopword_count(&self) -> usize {
        self.stopwords.len()
    }

    pub fn normalize(&self, raw: &str) -> String {
        let cleaned = self.clean(raw);
        let mut out = String::with_capacity(cleaned.len());
        for tok in cleaned.split_whitespace() {
            if tok == "RT" || self.stopwords.contains(tok) {
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(tok);
        }
        out
    }

    /// Steps 1-5.
    fn clean(&self, raw: &str) -> String {
        let text: String = raw.nfkc().collect();
        let text = strip_tweet_features(&text);
        let text: String = text
            .chars()
            .filter(|&c| c != TATWEEL && !is_combining_mark(c))
            .collect::<String>()
            .nfkc()
            .collect();
        let text = collapse_repeats(&text, self.repeat_collapse_len);
        let text: String = text
            .chars()
            .map(unify_letter)
            .filter(|&c| !self.strip_non_arabic || c.is_whitespace() || is_arabic_letter(c))
            .collect();
        collapse_repeats(&text, self.repeat_collapse_len)
    }
}

fn tweet_feature_patterns() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i:https?://|www\.)\S*|@\w+|\bRT\b").expect("valid pattern"))
}

/// Step 1. Everything that is not a letter, whitespace or a combining mark
/// becomes a space.
fn strip_tweet_features(text: &str) -> String {
    tweet_feature_patterns()
        .replace_all(text, " ")
        .chars()
        .map(|c| {
            if c.is_alphabetic() || c.is_whitespace() || is_combining_mark(c) {
                c
            } else {
                ' '
            }
        })
        .collect()
}

fn collapse_repeats(text: &str, max_run: usize) -> String {
    let mut out = String::with_capacity(text.len());
    let mut prev = None;
    let mut run = 0;
    for c in text.chars() {
        if Some(c) == prev {
            run += 1;
        } else {
            prev = Some(c);
            run = 1;
        }
        if run <= max_run {
            out.push(c);
        }
    }
    out
}

fn unify_letter(c: char) -> char {
    match c {
        '\u{0622}' | '\u{0623}' | '\u{0625}' => ALEF,
        '\u{0629}' => '\u{0647}',
        '\u{0649}' => '\u{064A}',
        c => c,
    }
}

/// Letters (general category L) of the Arabic block U+0600..U+06FF.
pub fn is_arabic_letter(c: char) -> bool {
    matches!(c,
        '\u{0620}'..='\u{063F}'
        | '\u{0640}'..='\u{064A}'
        | '\u{066E}'..='\u{066F}'
        | '\u{0671}'..='\u{06D3}'
        | '\u{06D5}'
        | '\u{06E5}'..='\u{06E6}'
        | '\u{06EE}'..='\u{06EF}'
        | '\u{06FA}'..='\u{06FC}'
        | '\u{06FF}')
}

pub fn normalize_text(raw: &str, normalizer: &Normalizer) -> String {
    normalizer.normalize(raw)
}

/// Fills `norm_text` on every row. Rows that normalize to nothing are kept
/// with `norm_text = Some("")`.
pub fn normalize_corpus(corpus: Vec<LabeledText>, normalizer: &Normalizer) -> Vec<LabeledText> {
    let out: Vec<LabeledText> = corpus
        .into_par_iter()
        .map(|mut row| {
            row.norm_text = Some(normalizer.normalize(&row.raw_text));
            row
        })
        .collect();
    let flagged = out.iter().filter(|r| r.is_flagged_empty()).count();
    if flagged > 0 {
        log::warn!("{flagged} rows are empty after normalization");
    }
    out
}

/// One golden-file case: raw input and the expected output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldenCase {
    pub line: usize,
    pub raw: String,
    pub expected: String,
}

/// Parses a golden TSV (`raw<TAB>expected`). `\t`, `\n` and `\\` are
/// escapes; lines starting with `#` are comments.
pub fn read_golden(path: &Path) -> Result<Vec<GoldenCase>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cases = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (raw, expected) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: "expected two tab-separated columns".into(),
        })?;
        cases.push(GoldenCase {
            line: i + 1,
            raw: unescape(raw),
            expected: unescape(expected),
        });
    }
    Ok(cases)
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}
