use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use arhate::augment::{build_augmented_corpus, AugmentPlan, SourceRows};
use arhate::config::ExperimentConfig;
use arhate::corpus::{read_corpus, write_corpus, LabeledText, Registry};
use arhate::encoder::{self, EncoderSpec, HyperParams};
use arhate::ensemble::{VoteConfig, VoteMode};
use arhate::evaluate::{cross_validate_detailed, stratified_folds, EnsembleRecipe, ModelRecipe, SingleModel, DEFAULT_FOLDS};
use arhate::normalize::{normalize_corpus, NormalizationConfig, Normalizer};
use arhate::pipeline::{self, write_json, write_predictions, RunOptions};
use arhate::report::{self, Baselines};
use arhate::tune::{cv_search, write_trace_csv, SearchGrid};
use arhate::{Error, Result};

#[derive(Parser)]
#[command(name = "arhate", version, about = "Arabic hate-speech classification experiments")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for fold assignment, shuffling and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a corpus JSONL file.
    Normalize {
        #[arg(long = "in", alias = "data")]
        input: PathBuf,
        #[arg(long)]
        stopwords: Option<PathBuf>,
        #[arg(long)]
        keep_non_arabic: bool,
    },
    /// Assign gold rows to stratified folds.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Train one model (or every configured member).
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Coordinate search over epochs, batch size and learning rate.
    Tune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Write class probabilities of a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Combine probability files by voting.
    Vote {
        #[arg(long, num_args = 1.., required = true)]
        probs: Vec<PathBuf>,
        #[arg(long)]
        mode: Option<VoteMode>,
        #[arg(long, value_delimiter = ',')]
        weights: Vec<f64>,
    },
    /// Add direct-merge and pseudo-labeled rows to a base corpus.
    Augment {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Stratified cross-validation of one model or the configured ensemble.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        augment_plan: Option<PathBuf>,
        #[arg(long)]
        registry: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Comparison tables from run directories and reference results.
    Report {
        #[arg(long, num_args = 0..)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        baselines: Option<PathBuf>,
        #[arg(long, default_value = "markdown")]
        format: report::Format,
    },
    /// Full pipeline from a config file.
    Run,
}

#[derive(clap::Args)]
struct ModelArgs {
    /// Backend key; without it the config's members are used.
    #[arg(long)]
    backend: Option<String>,
    /// Hyperparameter file (TOML with epochs, batch_size, learning_rate).
    #[arg(long)]
    hp: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

struct Ctx {
    config: Option<ExperimentConfig>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

impl Ctx {
    fn out(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| Error::Invalid("--out is required".into()))
    }

    fn seed(&self) -> u64 {
        self.seed.or(self.config.as_ref().map(|c| c.seed)).unwrap_or(0)
    }

    fn folds(&self, flag: Option<usize>) -> usize {
        flag.or(self.config.as_ref().map(|c| c.evaluate.folds)).unwrap_or(DEFAULT_FOLDS)
    }

    fn normalization(&self) -> NormalizationConfig {
        self.config.as_ref().map(ExperimentConfig::normalization).unwrap_or_default()
    }

    fn vote(&self) -> VoteConfig {
        self.config.as_ref().map(|c| c.ensemble.clone()).unwrap_or_default()
    }

    fn registry(&self, flag: Option<&Path>) -> Result<Registry> {
        match (flag, self.config.as_ref()) {
            (Some(p), _) => Registry::load(p),
            (None, Some(c)) if c.paths.registry.is_some() => c.registry(),
            _ => Err(Error::Invalid("a dataset registry is required (--registry or paths.registry)".into())),
        }
    }

    /// Reads a corpus, normalizing it first when any row lacks normalized text.
    fn corpus(&self, path: &Path) -> Result<Vec<LabeledText>> {
        let rows = read_corpus(path)?;
        if rows.iter().all(|r| r.norm_text.is_some()) {
            return Ok(rows);
        }
        Ok(normalize_corpus(rows, &Normalizer::new(&self.normalization())?))
    }

    fn members(&self, args: &ModelArgs) -> Result<Vec<(EncoderSpec, HyperParams)>> {
        let seed = self.seed();
        let Some(backend) = &args.backend else {
            let cfg = self
                .config
                .as_ref()
                .ok_or_else(|| Error::Invalid("pass --backend or --config".into()))?;
            let mut members = cfg.members()?;
            if self.seed.is_some() {
                for (i, (_, hp)) in members.iter_mut().enumerate() {
                    hp.seed = seed.wrapping_add(i as u64);
                }
            }
            return Ok(members);
        };
        let spec = match &self.config {
            Some(c) => EncoderSpec::with_max_tokens(backend, c.encoder.max_sequence_tokens)?,
            None => EncoderSpec::new(backend)?,
        };
        let mut hp = match &args.hp {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                toml::from_str::<HyperParams>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => SearchGrid::default().initial,
        };
        hp.epochs = args.epochs.unwrap_or(hp.epochs);
        hp.batch_size = args.batch_size.unwrap_or(hp.batch_size);
        hp.learning_rate = args.learning_rate.unwrap_or(hp.learning_rate);
        hp.seed = seed;
        hp.validate()?;
        Ok(vec![(spec, hp)])
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn execute(cli: Cli) -> Result<()> {
    let config = match (&cli.config, &cli.command) {
        (Some(p), _) => Some(ExperimentConfig::load(p)?),
        (None, Command::Run) => return Err(Error::Invalid("run needs --config".into())),
        (None, _) => None,
    };
    let ctx = Ctx {
        config,
        seed: cli.seed,
        out: cli.out.clone(),
    };

    match cli.command {
        Command::Normalize {
            input,
            stopwords,
            keep_non_arabic,
        } => {
            let mut cfg = ctx.normalization();
            if stopwords.is_some() {
                cfg.stopword_path = stopwords;
            }
            if keep_non_arabic {
                cfg.strip_non_arabic = false;
            }
            let rows = normalize_corpus(read_corpus(&input)?, &Normalizer::new(&cfg)?);
            write_corpus(ctx.out()?, &rows)
        }
        Command::Split { data, folds } => {
            let plan = stratified_folds(&read_corpus(&data)?, ctx.folds(folds), ctx.seed())?;
            write_json(ctx.out()?, &plan)
        }
        Command::Train { data, model } => {
            let rows: Vec<LabeledText> = ctx.corpus(&data)?.into_iter().filter(|r| r.usable_text().is_some()).collect();
            let members = ctx.members(&model)?;
            let out = ctx.out()?;
            for (i, (spec, hp)) in members.iter().enumerate() {
                let trained = encoder::fit(spec, hp, &rows)?;
                let dir = if members.len() == 1 { out.to_path_buf() } else { out.join(format!("member-{i}")) };
                encoder::save_model(&trained, &dir)?;
                println!("{}: {} ({hp})", dir.display(), spec.backend_key);
            }
            Ok(())
        }
        Command::Tune {
            data,
            backend,
            grid,
            folds,
        } => {
            let rows = ctx.corpus(&data)?;
            let args = ModelArgs {
                backend,
                hp: None,
                epochs: None,
                batch_size: None,
                learning_rate: None,
            };
            let (spec, _) = ctx.members(&args)?.remove(0);
            let mut grid = match (grid, &ctx.config) {
                (Some(p), _) => SearchGrid::load(&p)?,
                (None, Some(c)) => c.search_grid(),
                (None, None) => SearchGrid::default(),
            };
            grid.initial.seed = ctx.seed();
            let plan = stratified_folds(&rows, ctx.folds(folds), ctx.seed())?;
            let (best, trace) = cv_search(&spec, &grid, &rows, &plan)?;
            let out = ctx.out()?;
            create_dir(out)?;
            write_trace_csv(&out.join(format!("tune_trace_{}.csv", spec.backend_key)), &trace)?;
            write_json(&out.join(report::TRACE_FILE), &BTreeMap::from([(spec.backend_key.clone(), trace)]))?;
            write_json(&out.join("best.json"), &best)?;
            println!("best: {best}");
            Ok(())
        }
        Command::Predict { model, data } => {
            let trained = encoder::load_model(&model)?;
            let rows = ctx.corpus(&data)?;
            let refs: Vec<&LabeledText> = rows.iter().collect();
            encoder::write_probability_cache(ctx.out()?, &encoder::predict_matrix(&trained, &refs)?)
        }
        Command::Vote { probs, mode, weights } => {
            let matrices = probs
                .iter()
                .map(|p| encoder::read_probability_cache(p))
                .collect::<Result<Vec<_>>>()?;
            let mut vote = ctx.vote();
            if let Some(m) = mode {
                vote.mode = m;
            }
            if !weights.is_empty() {
                vote.weights = weights;
            }
            let labels = vote.combine(&matrices)?;
            let out = ctx.out()?;
            let mut w = csv::Writer::from_path(out).map_err(|e| Error::io(out, e.into()))?;
            let io = |e: csv::Error| Error::io(out, e.into());
            w.write_record(["id", "label"]).map_err(io)?;
            for (id, l) in matrices[0].ids().iter().zip(labels) {
                w.write_record([id.as_str(), l.as_str()]).map_err(io)?;
            }
            w.flush().map_err(|e| Error::io(out, e))
        }
        Command::Augment {
            base,
            plan,
            registry,
            report: report_path,
            model,
        } => {
            let plan = load_plan(&plan)?;
            let base = ctx.corpus(&base)?;
            let (rows, report) = augment_rows(&ctx, &base, &plan, registry.as_deref(), &model)?;
            write_corpus(ctx.out()?, &rows)?;
            match report_path {
                Some(p) => write_json(&p, &report),
                None => {
                    println!("{}", serde_json::to_string_pretty(&report).expect("serializable report"));
                    Ok(())
                }
            }
        }
        Command::Evaluate {
            data,
            folds,
            augment_plan,
            registry,
            model,
        } => {
            let out = ctx.out()?.to_path_buf();
            create_dir(&out)?;
            let mut rows = ctx.corpus(&data)?;
            if let Some(p) = augment_plan {
                let (augmented, report) = augment_rows(&ctx, &rows, &load_plan(&p)?, registry.as_deref(), &model)?;
                write_json(&out.join(report::AUGMENT_REPORT_FILE), &report)?;
                rows = augmented;
            }
            let members = ctx.members(&model)?;
            let recipe: Box<dyn ModelRecipe> = if members.len() == 1 {
                Box::new(SingleModel {
                    spec: members[0].0.clone(),
                    hp: members[0].1,
                })
            } else {
                Box::new(EnsembleRecipe {
                    members,
                    vote: ctx.vote(),
                })
            };
            let plan = stratified_folds(&rows, ctx.folds(folds), ctx.seed())?;
            let outcome = cross_validate_detailed(&rows, recipe.as_ref(), &plan)?;
            write_json(&out.join("folds.json"), &plan)?;
            write_predictions(&out.join("predictions.csv"), &outcome.predictions)?;
            write_json(&out.join(report::METRICS_FILE), &outcome.report)?;
            let r = &outcome.report;
            println!(
                "macro {:.2}  micro {:.2}  weighted {:.2}",
                r.macro_f1, r.micro_f1, r.weighted_f1
            );
            Ok(())
        }
        Command::Report { runs, baselines, format } => {
            let baselines = match baselines {
                Some(p) => Baselines::load(&p)?,
                None => Baselines::bundled(),
            };
            let doc = report::render(&report::load_runs(&runs)?, &baselines, format);
            match &ctx.out {
                Some(p) => fs::write(p, doc).map_err(|e| Error::io(p, e)),
                None => {
                    print!("{doc}");
                    Ok(())
                }
            }
        }
        Command::Run => {
            let path = cli.config.expect("checked above");
            let outcome = pipeline::run_experiment(
                &path,
                &RunOptions {
                    seed: ctx.seed,
                    out: ctx.out.clone(),
                },
            )?;
            println!("{}", outcome.dir.display());
            Ok(())
        }
    }
}

fn load_plan(path: &Path) -> Result<AugmentPlan> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let plan: AugmentPlan = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    plan.validate()?;
    Ok(plan)
}

fn augment_rows(
    ctx: &Ctx,
    base: &[LabeledText],
    plan: &AugmentPlan,
    registry: Option<&Path>,
    model: &ModelArgs,
) -> Result<(Vec<LabeledText>, arhate::augment::AugmentReport)> {
    let registry = ctx.registry(registry)?;
    let normalizer = Normalizer::new(&ctx.normalization())?;
    let sources = plan
        .direct_sources
        .iter()
        .chain(&plan.pseudo_sources)
        .map(|k| SourceRows::load(registry.get(k)?, &normalizer))
        .collect::<Result<Vec<_>>>()?;
    let members = if plan.pseudo_sources.is_empty() {
        Vec::new()
    } else {
        ctx.members(model)?
    };
    build_augmented_corpus(base, &sources, plan, &members, &ctx.vote())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
