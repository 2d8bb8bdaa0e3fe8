//! Dataset ingestion, label mapping and corpus statistics.
//!
//! Every source is converted into [`LabeledText`] rows. The canonical on-disk
//! form is JSON lines with `id`, `text`, `label` and `source` fields; the
//! pipeline adds `origin` and `norm_text` once those are known.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;

/// How a row entered the corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    #[default]
    Gold,
    DirectMerge,
    Pseudo,
}

impl Origin {
    fn is_gold(&self) -> bool {
        *self == Origin::Gold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledText {
    pub id: String,
    #[serde(rename = "text")]
    pub raw_text: String,
    pub label: Label,
    pub source: String,
    #[serde(default, skip_serializing_if = "Origin::is_gold")]
    pub origin: Origin,
    /// `None` until normalized. `Some("")` marks a row that normalized to
    /// nothing; such rows are kept but excluded from training and scoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_text: Option<String>,
}

impl LabeledText {
    pub fn gold(id: impl Into<String>, text: impl Into<String>, label: Label, source: impl Into<String>) -> Self {
        LabeledText {
            id: id.into(),
            raw_text: text.into(),
            label,
            source: source.into(),
            origin: Origin::Gold,
            norm_text: None,
        }
    }

    /// Normalized text if present and non-empty.
    pub fn usable_text(&self) -> Option<&str> {
        self.norm_text.as_deref().filter(|t| !t.is_empty())
    }

    pub fn is_flagged_empty(&self) -> bool {
        matches!(self.norm_text.as_deref(), Some(""))
    }

    /// Text used for training and prediction: normalized when available.
    pub fn model_text(&self) -> &str {
        self.norm_text.as_deref().unwrap_or(&self.raw_text)
    }

    fn qualified_id(&self) -> String {
        let prefix = format!("{}:", self.source);
        if self.id.starts_with(&prefix) {
            self.id.clone()
        } else {
            format!("{prefix}{}", self.id)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
    Tsv,
}

/// Where an external label string goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LabelTarget {
    Keep(Label),
    Discard,
}

impl FromStr for LabelTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("discard") {
            Ok(LabelTarget::Discard)
        } else {
            s.parse().map(LabelTarget::Keep)
        }
    }
}

impl TryFrom<String> for LabelTarget {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LabelTarget> for String {
    fn from(t: LabelTarget) -> String {
        match t {
            LabelTarget::Keep(l) => l.as_str().to_string(),
            LabelTarget::Discard => "discard".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub key: String,
    pub path: PathBuf,
    pub format: Format,
    /// External label string to taxonomy label or discard. Canonical label
    /// names (`NH`, `GH`, ...) map to themselves when not listed.
    #[serde(default)]
    pub label_map: BTreeMap<String, LabelTarget>,
    /// Keep only rows that map to a hate label.
    #[serde(default)]
    pub hate_only: bool,
}

impl DatasetDescriptor {
    fn resolve(&self, external: &str) -> Result<LabelTarget> {
        if let Some(t) = self.label_map.get(external) {
            return Ok(*t);
        }
        external
            .parse::<Label>()
            .map(LabelTarget::Keep)
            .map_err(|_| Error::UnmappedLabel {
                path: self.path.clone(),
                label: external.to_string(),
            })
    }
}

/// Declarative list of datasets, normally a TOML file with `[[dataset]]`
/// tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    #[serde(default, rename = "dataset")]
    pub datasets: Vec<DatasetDescriptor>,
}

impl Registry {
    /// Loads a registry; relative dataset paths resolve against the
    /// registry file's directory.
    pub fn load(path: &Path) -> Result<Registry> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut reg: Registry = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut seen = HashSet::new();
        for d in &mut reg.datasets {
            if !seen.insert(d.key.clone()) {
                return Err(Error::Config(format!("dataset key {:?} declared twice", d.key)));
            }
            if d.path.is_relative() {
                d.path = base.join(&d.path);
            }
        }
        Ok(reg)
    }

    pub fn get(&self, key: &str) -> Result<&DatasetDescriptor> {
        self.datasets
            .iter()
            .find(|d| d.key == key)
            .ok_or_else(|| Error::Config(format!("dataset {key:?} is not in the registry")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadSummary {
    pub kept: usize,
    pub discarded: usize,
}

#[derive(Deserialize)]
struct RawRow {
    id: serde_json::Value,
    text: String,
    label: String,
}

fn id_string(v: serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Loads and label-maps one dataset. Rows mapped to `discard` (and non-hate
/// rows of a `hate_only` source) are dropped; the drop count is logged.
pub fn load_dataset(descriptor: &DatasetDescriptor) -> Result<Vec<LabeledText>> {
    load_dataset_with_summary(descriptor).map(|(rows, _)| rows)
}

pub fn load_dataset_with_summary(d: &DatasetDescriptor) -> Result<(Vec<LabeledText>, LoadSummary)> {
    let raw = match d.format {
        Format::Jsonl => read_raw_jsonl(&d.path)?,
        Format::Csv => read_raw_delimited(&d.path, b',')?,
        Format::Tsv => read_raw_delimited(&d.path, b'\t')?,
    };

    let mut rows = Vec::with_capacity(raw.len());
    let mut summary = LoadSummary::default();
    let mut ids = HashSet::new();
    for (line, row) in raw {
        if row.text.trim().is_empty() {
            return Err(Error::Parse {
                path: d.path.clone(),
                line,
                message: "empty text".into(),
            });
        }
        let label = match d.resolve(&row.label)? {
            LabelTarget::Keep(l) if !d.hate_only || l.is_hate() => l,
            _ => {
                summary.discarded += 1;
                continue;
            }
        };
        if !ids.insert(row.id.clone()) {
            return Err(Error::DuplicateId(format!("{}:{}", d.key, row.id)));
        }
        rows.push(LabeledText::gold(row.id, row.text, label, d.key.clone()));
    }
    summary.kept = rows.len();
    log::info!(
        "{}: kept {} rows, discarded {}",
        d.key,
        summary.kept,
        summary.discarded
    );
    Ok((rows, summary))
}

struct ExternalRow {
    id: String,
    text: String,
    label: String,
}

fn read_raw_jsonl(path: &Path) -> Result<Vec<(usize, ExternalRow)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let row: RawRow = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let id = id_string(row.id).ok_or_else(|| parse_err("id must be a string or number".into()))?;
        out.push((
            line_no,
            ExternalRow {
                id,
                text: row.text,
                label: row.label,
            },
        ));
    }
    Ok(out)
}

fn read_raw_delimited(path: &Path, delimiter: u8) -> Result<Vec<(usize, ExternalRow)>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("missing column {name:?}"),
            })
    };
    let (id_col, text_col, label_col) = (column("id")?, column("text")?, column("label")?);

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| record.get(i).unwrap_or_default().to_string();
        out.push((
            line,
            ExternalRow {
                id: field(id_col),
                text: field(text_col),
                label: field(label_col).trim().to_string(),
            },
        ));
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// Reads a pipeline JSONL file (canonical fields plus `origin`/`norm_text`).
pub fn read_corpus(path: &Path) -> Result<Vec<LabeledText>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: LabeledText = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_corpus(path: &Path, rows: &[LabeledText]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WordStats {
    pub texts: usize,
    pub word_count: usize,
    pub unique_words: usize,
    pub avg_words_per_text: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub per_class_count: BTreeMap<Label, usize>,
    pub word_count: usize,
    pub unique_words: usize,
    pub avg_words_per_text: f64,
    /// Same figures broken down by class.
    pub by_class: BTreeMap<Label, WordStats>,
}

#[derive(Default)]
struct Tally<'a> {
    texts: usize,
    words: usize,
    vocab: HashSet<&'a str>,
}

impl Tally<'_> {
    fn finish(self) -> WordStats {
        WordStats {
            texts: self.texts,
            word_count: self.words,
            unique_words: self.vocab.len(),
            avg_words_per_text: if self.texts == 0 { 0.0 } else { self.words as f64 / self.texts as f64 },
        }
    }
}

/// Whitespace-token statistics over raw text. Unique words are counted
/// exactly as written (case and diacritics significant).
pub fn compute_stats(corpus: &[LabeledText]) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut all = Tally::default();
    let mut by_class: BTreeMap<Label, Tally> = BTreeMap::new();
    for row in corpus {
        let class = by_class.entry(row.label).or_default();
        all.texts += 1;
        class.texts += 1;
        for w in row.raw_text.split_whitespace() {
            all.words += 1;
            class.words += 1;
            all.vocab.insert(w);
            class.vocab.insert(w);
        }
    }
    if all.words == 0 {
        return Err(Error::EmptyCorpus);
    }
    let by_class: BTreeMap<Label, WordStats> = by_class.into_iter().map(|(l, t)| (l, t.finish())).collect();
    let all = all.finish();
    Ok(CorpusStats {
        per_class_count: by_class.iter().map(|(l, s)| (*l, s.texts)).collect(),
        word_count: all.word_count,
        unique_words: all.unique_words,
        avg_words_per_text: all.avg_words_per_text,
        by_class,
    })
}

/// Per-class row counts.
pub fn class_counts<'a>(rows: impl IntoIterator<Item = &'a LabeledText>) -> [usize; 5] {
    let mut counts = [0; 5];
    for r in rows {
        counts[r.label.index()] += 1;
    }
    counts
}

/// Concatenates corpora in order. Ids are qualified as `source:id`. With
/// `dedup`, a row whose normalized text was already seen is dropped; rows
/// without normalized text (or flagged empty) never count as duplicates.
pub fn merge(corpora: &[Vec<LabeledText>], dedup: bool) -> Result<Vec<LabeledText>> {
    let mut out = Vec::with_capacity(corpora.iter().map(Vec::len).sum());
    let mut ids = HashSet::new();
    let mut seen: HashSet<&str> = HashSet::new();
    for row in corpora.iter().flatten() {
        if dedup {
            if let Some(text) = row.usable_text() {
                if !seen.insert(text) {
                    continue;
                }
            }
        }
        let id = row.qualified_id();
        if !ids.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        out.push(LabeledText { id, ..row.clone() });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normed(id: &str, text: &str, label: Label, source: &str) -> LabeledText {
        LabeledText {
            norm_text: Some(text.to_string()),
            ..LabeledText::gold(id, text, label, source)
        }
    }

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn csv_fixture_drops_discarded_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            dir.path(),
            "ext.csv",
            "id,text,label\n1,كلام سيء,hateful\n2,كلام عادي,normal\n3,\"كلام, آخر\",hateful\n",
        );
        let d = DatasetDescriptor {
            key: "ext".into(),
            path,
            format: Format::Csv,
            label_map: [("hateful".to_string(), LabelTarget::Keep(Label::GH)), ("normal".to_string(), LabelTarget::Discard)]
                .into_iter()
                .collect(),
            hate_only: false,
        };
        let (rows, summary) = load_dataset_with_summary(&d).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(summary, LoadSummary { kept: 2, discarded: 1 });
        assert!(rows.iter().all(|r| r.label == Label::GH && r.source == "ext"));
        assert_eq!(rows[1].raw_text, "كلام, آخر");
    }

    #[test]
    fn empty_file_gives_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "e.jsonl", "");
        let d = DatasetDescriptor {
            key: "e".into(),
            path,
            format: Format::Jsonl,
            label_map: BTreeMap::new(),
            hate_only: false,
        };
        assert!(load_dataset(&d).unwrap().is_empty());
    }

    #[test]
    fn unmapped_label_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "x.tsv", "id\ttext\tlabel\n1\tنص\tabusive\n");
        let d = DatasetDescriptor {
            key: "x".into(),
            path,
            format: Format::Tsv,
            label_map: BTreeMap::new(),
            hate_only: false,
        };
        match load_dataset(&d) {
            Err(Error::UnmappedLabel { label, .. }) => assert_eq!(label, "abusive"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_json_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            dir.path(),
            "b.jsonl",
            "{\"id\":\"1\",\"text\":\"نص\",\"label\":\"NH\",\"source\":\"b\"}\n{not json\n",
        );
        let d = DatasetDescriptor {
            key: "b".into(),
            path,
            format: Format::Jsonl,
            label_map: BTreeMap::new(),
            hate_only: false,
        };
        match load_dataset(&d) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hate_only_keeps_hate_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            dir.path(),
            "h.jsonl",
            concat!(
                "{\"id\":1,\"text\":\"a\",\"label\":\"HS\"}\n",
                "{\"id\":2,\"text\":\"b\",\"label\":\"NOT_HS\"}\n",
            ),
        );
        let d = DatasetDescriptor {
            key: "h".into(),
            path,
            format: Format::Jsonl,
            label_map: [("HS".to_string(), LabelTarget::Keep(Label::GH)), ("NOT_HS".to_string(), LabelTarget::Keep(Label::NH))]
                .into_iter()
                .collect(),
            hate_only: true,
        };
        let rows = load_dataset(&d).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].id, "1");
    }

    #[test]
    fn stats_on_single_text() {
        let s = compute_stats(&[LabeledText::gold("1", "ا ب ا", Label::NH, "t")]).unwrap();
        assert_eq!(s.word_count, 3);
        assert_eq!(s.unique_words, 2);
        assert_eq!(s.avg_words_per_text, 3.0);
        assert_eq!(s.per_class_count, [(Label::NH, 1)].into_iter().collect());
    }

    #[test]
    fn stats_reject_degenerate_corpora() {
        assert!(matches!(compute_stats(&[]), Err(Error::EmptyCorpus)));
        assert!(matches!(
            compute_stats(&[LabeledText::gold("1", "   ", Label::NH, "t")]),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn merge_identity_and_dedup() {
        let a = vec![normed("1", "نص اول", Label::NH, "a"), normed("2", "نص ثاني", Label::GH, "a")];
        let b = vec![normed("1", "نص ثاني", Label::Re, "b"), normed("2", "نص ثالث", Label::Ra, "b")];

        let same = merge(&[a.clone(), vec![]], true).unwrap();
        assert_eq!(same.len(), a.len());
        assert_eq!(same[0].id, "a:1");
        assert_eq!(same[0].raw_text, a[0].raw_text);

        let deduped = merge(&[a.clone(), b.clone()], true).unwrap();
        assert_eq!(deduped.len(), a.len() + b.len() - 1);
        // first occurrence in source order wins
        assert_eq!(deduped[1].label, Label::GH);

        assert_eq!(merge(&[a.clone(), b.clone()], false).unwrap().len(), a.len() + b.len());
    }

    #[test]
    fn merge_rejects_id_collisions() {
        let a = vec![normed("1", "x", Label::NH, "a"), normed("a:1", "y", Label::NH, "a")];
        assert!(matches!(merge(&[a], false), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn registry_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let reg = write(
            dir.path(),
            "datasets.toml",
            r#"
[[dataset]]
key = "rhs"
path = "rhs.csv"
format = "csv"
hate_only = true
[dataset.label_map]
"1" = "Re"
"0" = "discard"
"#,
        );
        let r = Registry::load(&reg).unwrap();
        let d = r.get("rhs").unwrap();
        assert_eq!(d.path, dir.path().join("rhs.csv"));
        assert_eq!(d.label_map["0"], LabelTarget::Discard);
        assert!(r.get("nope").is_err());
    }

    #[test]
    fn corpus_file_round_trip_keeps_pipeline_fields() {
        let dir = tempfile::tempdir().unwrap();
        let mut row = normed("7", "نص", Label::Se, "s");
        row.origin = Origin::Pseudo;
        let path = dir.path().join("c.jsonl");
        write_corpus(&path, &[row.clone()]).unwrap();
        assert_eq!(read_corpus(&path).unwrap(), vec![row]);
    }
}
