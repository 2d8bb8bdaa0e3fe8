//! Comparison tables built from run directories and reference results.
//!
//! Reference rows are stored in their original scale and converted to
//! percent for display. Each row's macro and weighted F1 are recomputed from
//! its per-class cells; a row is flagged when a stored aggregate is more
//! than [`CONSISTENCY_TOLERANCE`] away from the recomputed one, measured in
//! the row's own scale.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentReport;
use crate::corpus::CorpusStats;
use crate::error::{Error, Result};
use crate::evaluate::{macro_average, weighted_average, MetricsReport};
use crate::label::{Label, NUM_CLASSES};
use crate::tune::SearchTrace;

pub const CONSISTENCY_TOLERANCE: f64 = 0.02;

pub const METRICS_FILE: &str = "metrics.json";
pub const STATS_FILE: &str = "stats.json";
pub const AUGMENT_REPORT_FILE: &str = "augment_report.json";
pub const TRACE_FILE: &str = "tune_trace.json";

/// Reference results shipped with the crate.
pub const BUNDLED_BASELINES: &str = include_str!("../data/baselines.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Percent,
    Fraction,
}

impl Scale {
    fn to_percent(self) -> f64 {
        match self {
            Scale::Percent => 1.0,
            Scale::Fraction => 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub system: String,
    #[serde(default)]
    pub citation: Option<String>,
    pub f1: BTreeMap<Label, f64>,
    pub macro_f1: f64,
    #[serde(default)]
    pub micro_f1: Option<f64>,
    #[serde(default)]
    pub weighted_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineTable {
    pub key: String,
    pub title: String,
    pub scale: Scale,
    #[serde(rename = "row")]
    pub rows: Vec<BaselineRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    /// Gold class supports of the reference corpus, used to recompute
    /// weighted F1 of reference rows.
    pub supports: BTreeMap<Label, u64>,
    #[serde(rename = "table")]
    pub tables: Vec<BaselineTable>,
}

impl Baselines {
    pub fn parse(text: &str) -> Result<Baselines> {
        let b: Baselines = toml::from_str(text).map_err(|e| Error::Config(format!("baselines: {e}")))?;
        for t in &b.tables {
            for r in &t.rows {
                if r.f1.len() != NUM_CLASSES {
                    return Err(Error::Config(format!(
                        "baseline row {:?} in {:?} needs all five per-class values",
                        r.system, t.key
                    )));
                }
            }
        }
        Ok(b)
    }

    pub fn bundled() -> Baselines {
        Baselines::parse(BUNDLED_BASELINES).expect("bundled baselines parse")
    }

    pub fn load(path: &Path) -> Result<Baselines> {
        Baselines::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn table(&self, key: &str) -> Option<&BaselineTable> {
        self.tables.iter().find(|t| t.key == key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Reference,
    Run,
}

/// One display row, already in percent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub kind: RowKind,
    pub system: String,
    pub citation: Option<String>,
    pub f1: [f64; NUM_CLASSES],
    pub macro_f1: f64,
    pub micro_f1: Option<f64>,
    pub weighted_f1: Option<f64>,
    pub macro_recomputed: f64,
    pub weighted_recomputed: Option<f64>,
    /// Human-readable reason when a stored aggregate disagrees.
    pub flag: Option<String>,
}

fn by_label<T: Copy + Default>(map: &BTreeMap<Label, T>) -> [T; NUM_CLASSES] {
    Label::ALL.map(|l| map.get(&l).copied().unwrap_or_default())
}

/// Recomputes aggregates in the row's own scale, flags disagreement, then
/// converts everything to percent.
fn check_row(
    kind: RowKind,
    system: &str,
    citation: Option<String>,
    native: ([f64; NUM_CLASSES], f64, Option<f64>, Option<f64>),
    supports: Option<&[u64; NUM_CLASSES]>,
    scale: Scale,
) -> ReportRow {
    let (f1, macro_f1, micro_f1, weighted_f1) = native;
    let macro_re = macro_average(&f1);
    let weighted_re = supports.map(|s| weighted_average(&f1, s));
    let mut flags = Vec::new();
    if (macro_re - macro_f1).abs() > CONSISTENCY_TOLERANCE {
        flags.push(format!("macro stored {macro_f1} vs {macro_re:.4}"));
    }
    if let (Some(stored), Some(re)) = (weighted_f1, weighted_re) {
        if (re - stored).abs() > CONSISTENCY_TOLERANCE {
            flags.push(format!("weighted stored {stored} vs {re:.4}"));
        }
    }
    let k = scale.to_percent();
    ReportRow {
        kind,
        system: system.to_string(),
        citation,
        f1: f1.map(|v| v * k),
        macro_f1: macro_f1 * k,
        micro_f1: micro_f1.map(|v| v * k),
        weighted_f1: weighted_f1.map(|v| v * k),
        macro_recomputed: macro_re * k,
        weighted_recomputed: weighted_re.map(|v| v * k),
        flag: (!flags.is_empty()).then(|| flags.join("; ")),
    }
}

pub fn baseline_rows(table: &BaselineTable, supports: &BTreeMap<Label, u64>) -> Vec<ReportRow> {
    let supports = (supports.len() == NUM_CLASSES).then(|| by_label(supports));
    table
        .rows
        .iter()
        .map(|r| {
            check_row(
                RowKind::Reference,
                &r.system,
                r.citation.clone(),
                (by_label(&r.f1), r.macro_f1, r.micro_f1, r.weighted_f1),
                supports.as_ref(),
                table.scale,
            )
        })
        .collect()
}

pub fn run_row(name: &str, metrics: &MetricsReport) -> ReportRow {
    let f1 = Label::ALL.map(|l| metrics.per_class.get(&l).map(|s| s.f1).unwrap_or_default());
    let supports = by_label(&metrics.supports);
    check_row(
        RowKind::Run,
        name,
        None,
        (f1, metrics.macro_f1, Some(metrics.micro_f1), Some(metrics.weighted_f1)),
        Some(&supports),
        Scale::Percent,
    )
}

/// Artifacts of one run directory.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub name: String,
    pub metrics: MetricsReport,
    pub stats: Option<CorpusStats>,
    pub augment: Option<AugmentReport>,
    /// Search traces keyed by backend.
    pub trace: Option<BTreeMap<String, Vec<SearchTrace>>>,
}

fn read_json_opt<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map(Some).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

impl RunArtifacts {
    pub fn load(dir: &Path) -> Result<RunArtifacts> {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let metrics = read_json_opt(&dir.join(METRICS_FILE))?
            .ok_or_else(|| Error::Invalid(format!("run {}: missing {METRICS_FILE}", dir.display())))?;
        Ok(RunArtifacts {
            name,
            metrics,
            stats: read_json_opt(&dir.join(STATS_FILE))?,
            augment: read_json_opt(&dir.join(AUGMENT_REPORT_FILE))?,
            trace: read_json_opt(&dir.join(TRACE_FILE))?,
        })
    }
}

/// Loads every run, reporting all runs with missing metrics at once.
pub fn load_runs(dirs: &[PathBuf]) -> Result<Vec<RunArtifacts>> {
    let mut runs = Vec::new();
    let mut missing = Vec::new();
    for d in dirs {
        if !d.join(METRICS_FILE).is_file() {
            missing.push(d.display().to_string());
            continue;
        }
        runs.push(RunArtifacts::load(d)?);
    }
    if !missing.is_empty() {
        return Err(Error::Invalid(format!("no {METRICS_FILE} in: {}", missing.join(", "))));
    }
    Ok(runs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Markdown,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Format> {
        match s {
            "markdown" | "md" => Ok(Format::Markdown),
            "csv" => Ok(Format::Csv),
            _ => Err(Error::Invalid(format!("report format must be markdown or csv, got {s:?}"))),
        }
    }
}

/// Each reference table followed by the run rows. Pure: identical inputs
/// give identical output.
pub fn comparison_tables(runs: &[RunArtifacts], baselines: &Baselines) -> Vec<(String, String, Vec<ReportRow>)> {
    let run_rows: Vec<ReportRow> = runs.iter().map(|r| run_row(&r.name, &r.metrics)).collect();
    let mut out: Vec<_> = baselines
        .tables
        .iter()
        .map(|t| {
            let mut rows = baseline_rows(t, &baselines.supports);
            rows.extend(run_rows.iter().cloned());
            (t.key.clone(), t.title.clone(), rows)
        })
        .collect();
    if baselines.tables.is_empty() && !run_rows.is_empty() {
        out.push(("runs".into(), "Runs".into(), run_rows));
    }
    out
}

fn pct(v: f64) -> String {
    format!("{v:.2}")
}

fn opt_pct(v: Option<f64>) -> String {
    v.map(pct).unwrap_or_else(|| "-".into())
}

pub fn render(runs: &[RunArtifacts], baselines: &Baselines, format: Format) -> String {
    match format {
        Format::Markdown => render_markdown(runs, baselines),
        Format::Csv => render_csv(runs, baselines),
    }
}

fn render_markdown(runs: &[RunArtifacts], baselines: &Baselines) -> String {
    let mut doc = String::from("# Results\n\nAll values are F1 in percent.");
    if baselines.tables.iter().any(|t| t.scale == Scale::Fraction) {
        doc.push_str(" Reference rows reported on a 0-1 scale were multiplied by 100.");
    }
    doc.push('\n');
    let header = Label::ALL.map(|l| l.as_str()).join(" | ");
    for (_, title, rows) in comparison_tables(runs, baselines) {
        let _ = write!(
            doc,
            "\n## {title}\n\n| System | {header} | Macro | Micro | Weighted | Check |\n|---|---|---|---|---|---|---|---|---|---|\n"
        );
        for r in rows {
            let name = match (&r.kind, &r.citation) {
                (RowKind::Run, _) => format!("**{}**", r.system),
                (_, Some(c)) if *c != r.system => format!("{} [{c}]", r.system),
                _ => r.system.clone(),
            };
            let cells = r.f1.map(pct).join(" | ");
            let check = r.flag.map(|f| format!("FLAG: {f}")).unwrap_or_else(|| "ok".into());
            let _ = writeln!(
                doc,
                "| {name} | {cells} | {} | {} | {} | {check} |",
                pct(r.macro_f1),
                opt_pct(r.micro_f1),
                opt_pct(r.weighted_f1)
            );
        }
    }
    for run in runs {
        render_run_detail(&mut doc, run);
    }
    doc
}

fn render_run_detail(doc: &mut String, run: &RunArtifacts) {
    let _ = write!(doc, "\n## Run {}\n", run.name);
    if let Some(stats) = &run.stats {
        doc.push_str("\n| Class | Texts | Words | Unique words | Words per text |\n|---|---|---|---|---|\n");
        for (l, s) in &stats.by_class {
            let _ = writeln!(
                doc,
                "| {l} | {} | {} | {} | {:.2} |",
                s.texts, s.word_count, s.unique_words, s.avg_words_per_text
            );
        }
        let total: usize = stats.per_class_count.values().sum();
        let _ = writeln!(
            doc,
            "| all | {total} | {} | {} | {:.2} |",
            stats.word_count, stats.unique_words, stats.avg_words_per_text
        );
    }
    for (backend, trace) in run.trace.iter().flatten() {
        let _ = write!(
            doc,
            "\nSearch for {backend}:\n\n| Stage | Epochs | Batch | Learning rate | Micro F1 |\n|---|---|---|---|---|\n"
        );
        for t in trace {
            let score = t.score.map(pct).unwrap_or_else(|| "failed".into());
            let _ = writeln!(
                doc,
                "| {} | {} | {} | {:e} | {score} |",
                t.stage.as_str(),
                t.hp.epochs,
                t.hp.batch_size,
                t.hp.learning_rate
            );
        }
    }
    if let Some(aug) = &run.augment {
        doc.push_str("\n| Pseudo label | Rows |\n|---|---|\n");
        for (l, n) in &aug.pseudo_counts {
            let _ = writeln!(doc, "| {l} | {n} |");
        }
        let _ = writeln!(
            doc,
            "\nDirect rows added: {}. Discarded: {} predicted NH, {} low confidence, {} duplicates, {} empty.",
            aug.added_direct, aug.discarded_nh, aug.discarded_low_confidence, aug.discarded_duplicates, aug.discarded_empty
        );
    }
    let m = &run.metrics;
    doc.push_str("\n| Class | Precision | Recall | F1 | Support |\n|---|---|---|---|---|\n");
    for l in Label::ALL {
        let s = m.per_class.get(&l).copied().unwrap_or_default();
        let support = m.supports.get(&l).copied().unwrap_or_default();
        let _ = writeln!(doc, "| {l} | {} | {} | {} | {support} |", pct(s.precision), pct(s.recall), pct(s.f1));
    }
    let _ = writeln!(
        doc,
        "\nFold mean over {} folds: macro {}, micro {}, weighted {}. Pooled predictions: macro {}, micro {}, weighted {}.",
        m.k,
        pct(m.macro_f1),
        pct(m.micro_f1),
        pct(m.weighted_f1),
        pct(m.pooled.macro_f1),
        pct(m.pooled.micro_f1),
        pct(m.pooled.weighted_f1)
    );
}

fn render_csv(runs: &[RunArtifacts], baselines: &Baselines) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["table", "kind", "system", "citation"];
    header.extend(Label::ALL.map(|l| l.as_str()));
    header.extend(["macro", "micro", "weighted", "macro_recomputed", "weighted_recomputed", "flag"]);
    w.write_record(&header).expect("in-memory write");
    for (key, _, rows) in comparison_tables(runs, baselines) {
        for r in rows {
            let mut rec = vec![
                key.clone(),
                match r.kind {
                    RowKind::Reference => "reference".into(),
                    RowKind::Run => "run".into(),
                },
                r.system.clone(),
                r.citation.clone().unwrap_or_default(),
            ];
            rec.extend(r.f1.map(pct));
            rec.extend([
                pct(r.macro_f1),
                r.micro_f1.map(pct).unwrap_or_default(),
                r.weighted_f1.map(pct).unwrap_or_default(),
                pct(r.macro_recomputed),
                r.weighted_recomputed.map(pct).unwrap_or_default(),
                r.flag.clone().unwrap_or_default(),
            ]);
            w.write_record(&rec).expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
}
