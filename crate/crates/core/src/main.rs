use std::collections::HashMap;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use asag::classifier::{
    load_checkpoint, predict, resolve_backend, save_checkpoint, train, BackendSpec, Checkpoint,
    ClassifierConfig, FineTuneStep, Init, ReferenceOptions, ToyOptions,
};
use asag::corpus::{generate_synthetic_corpus, load_corpus, SynthSpec};
use asag::curriculum::{
    run_chain, run_fraction_sweep, write_curves_csv, CurriculumSpec, SweepOptions,
};
use asag::erroranalysis::{
    both_right, export_review_queue, find_disagreements, model_specific_table, parse_review_file,
    shared_error_table, ModelPredictions, ReviewOverlay,
};
use asag::llmharness::{
    aggregate_temperature_runs, export_finetune_dataset, prompt_for_record, run_batch,
    score_grades, ChatClient, MockClient, RetryPolicy, RunConfig, UnparseablePolicy,
};
use asag::metrics::{confusion, macro_metrics, ConfusionMatrix, MetricsReport};
use asag::partitioning::{
    split_by_student, SplitManifest, SplitResult, SplitSpec, SubsetSchedule, Tier,
    DEFAULT_FRACTION_STEP,
};
use asag::report::{
    advantage_row, read_curves_csv, run_dir_name, write_report, FileDigest, NamedCurve, RunManifest,
};
use asag::selection::summarize_curve;
use asag::zipf::{
    fit_zipf, rank_frequency, singleton_fraction, units, FitOptions, Normalization, Unit,
};
use asag::{Corpus, Label, ResponseRecord};

/// Experiments on near-domain transfer for short-answer grading.
#[derive(Parser, Debug)]
#[command(name = "asag", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Assign students to train/validation/test tiers.
    Split(SplitArgs),
    /// Fine-tune one model on one question.
    Train(TrainArgs),
    /// Predict labels with a checkpoint.
    Predict(PredictArgs),
    /// Fine-tune at every fraction of the training tier.
    Sweep(SweepArgs),
    /// Run a sequential fine-tuning chain.
    Chain(ChainArgs),
    /// Apply the top-k / one-SD selection rule to learning curves.
    Select(SelectArgs),
    /// Compare a transfer curve against a scratch curve.
    Advantage(AdvantageArgs),
    /// Accuracy and macro precision/recall/F1.
    Metrics(MetricsArgs),
    /// Shared and model-specific error tables for two models.
    Errors(ErrorsArgs),
    /// Export disagreements for expert review.
    ReviewExport(ReviewExportArgs),
    /// Apply a reviewed queue and write the relabelled corpus.
    ReviewApply(ReviewApplyArgs),
    /// Render grading prompts.
    PromptExport(PromptExportArgs),
    /// Grade responses with a chat model.
    LlmRun(LlmRunArgs),
    /// Write a chat fine-tuning dataset.
    FinetuneExport(FinetuneExportArgs),
    /// Rank-frequency table and power-law fit.
    Zipf(ZipfArgs),
    /// Plots and summary tables from learning curves.
    Report(ReportArgs),
    /// Re-run the command recorded in a manifest and check its outputs.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    /// TOML generator spec; the published label counts when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SplitArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    train_ratio: f64,
    #[arg(long, default_value_t = 0.15)]
    val_ratio: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
enum BackendKind {
    Toy,
    Reference,
}

/// Training hyperparameters. Flags override the config file, which
/// overrides the defaults.
#[derive(Args, Debug, Clone, Serialize)]
struct ClassifierFlags {
    /// TOML classifier config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ClassifierFlags {
    fn overlay(&self, mut c: ClassifierConfig) -> ClassifierConfig {
        match (self.backend, c.backend) {
            (Some(BackendKind::Toy), BackendSpec::Reference(_)) => {
                c.backend = BackendSpec::Toy(ToyOptions::default())
            }
            (Some(BackendKind::Reference), BackendSpec::Toy(_)) => {
                c.backend = BackendSpec::Reference(ReferenceOptions::default())
            }
            _ => {}
        }
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.patience {
            c.patience_epochs = v;
        }
        if let Some(v) = self.max_epochs {
            c.max_epochs = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        c
    }

    fn resolve(&self, run: &mut Run) -> Result<ClassifierConfig> {
        let base = match &self.config {
            Some(p) => {
                run.input(p)?;
                let text = read_text(p)?;
                toml::from_str(&text).map_err(|e| anyhow!("{}: {e}", p.display()))?
            }
            None => ClassifierConfig::default(),
        };
        let c = self.overlay(base);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Split manifest written by `split`.
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    question: String,
    /// Checkpoint to fine-tune; a fresh base model when omitted.
    #[arg(long)]
    base: Option<PathBuf>,
    /// Fraction of the training tier, on the sweep grid.
    #[arg(long, default_value_t = 1.0)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    schedule_seed: u64,
    #[arg(long, default_value_t = DEFAULT_FRACTION_STEP)]
    step: f64,
    #[command(flatten)]
    classifier: ClassifierFlags,
    /// Checkpoint directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
enum TierArg {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Args, Debug, Serialize)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    question: Option<String>,
    /// Required unless `--tier all`.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TierArg::Test)]
    tier: TierArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SweepArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    question: String,
    #[arg(long)]
    base: Option<PathBuf>,
    /// Comma-separated fractions in [0, 1]; the whole grid when omitted.
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_FRACTION_STEP)]
    step: f64,
    #[arg(long, default_value_t = 0)]
    schedule_seed: u64,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[command(flatten)]
    classifier: ClassifierFlags,
    /// Learning-curve CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ChainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    split: PathBuf,
    /// TOML chain spec; Q1 full then sweeps over Q2 and Q3 when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    schedule_seed: Option<u64>,
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long)]
    select_k: Option<usize>,
    #[command(flatten)]
    classifier: ClassifierFlags,
    /// Output directory; a fresh run directory when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SelectArgs {
    #[arg(long, num_args = 1.., required = true)]
    curves: Vec<PathBuf>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct AdvantageArgs {
    #[arg(long)]
    scratch: PathBuf,
    #[arg(long)]
    transfer: PathBuf,
    /// Percentage points below the baseline that still count as reaching it.
    #[arg(long, default_value_t = 1.0)]
    tolerance: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct MetricsArgs {
    /// Predictions CSV written by `predict`.
    #[arg(
        long,
        conflicts_with = "confusion",
        required_unless_present = "confusion"
    )]
    predictions: Option<PathBuf>,
    /// Row-major counts, rows = human label: `a,b,c;d,e,f;g,h,i`.
    #[arg(long)]
    confusion: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ErrorsArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ReviewExportArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    predictions: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ReviewApplyArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    review: PathBuf,
    /// Relabelled corpus (JSONL).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct PromptExportArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    question: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
enum PolicyArg {
    Abstain,
    Exclude,
}

#[derive(Args, Debug, Serialize)]
struct LlmRunArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    question: Option<String>,
    /// Grade only the first N records.
    #[arg(long)]
    limit: Option<usize>,
    /// JSON reply script for the offline mock client.
    #[arg(long)]
    mock: Option<PathBuf>,
    /// Use the OpenAI endpoint (needs the `openai` feature and OPENAI_API_KEY).
    #[arg(long, conflicts_with = "mock")]
    openai: bool,
    #[arg(long, default_value = "gpt-4")]
    model: String,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.5, 1.0])]
    temperatures: Vec<f64>,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    #[arg(long, default_value_t = 3)]
    max_attempts: usize,
    #[arg(long, default_value_t = 500)]
    backoff_ms: u64,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PolicyArg::Abstain)]
    unparseable: PolicyArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct FinetuneExportArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    question: Option<String>,
    /// Restrict to one tier of this split.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TierArg::Train)]
    tier: TierArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
enum UnitArg {
    Tokens,
    Responses,
}

#[derive(Args, Debug, Serialize)]
struct ZipfArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    question: Option<String>,
    #[arg(long, value_enum, default_value_t = UnitArg::Tokens)]
    unit: UnitArg,
    #[arg(long)]
    keep_case: bool,
    #[arg(long)]
    strip_punctuation: bool,
    #[arg(long, default_value_t = 1)]
    min_rank: usize,
    #[arg(long)]
    max_rank: Option<usize>,
    /// Rank-frequency CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    curves: Vec<PathBuf>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    tolerance: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
}

/// Manifest under construction for one command.
struct Run {
    manifest: RunManifest,
    inputs: Vec<PathBuf>,
}

impl Run {
    fn new(command: &str, args: &impl Serialize, argv: &[String]) -> Run {
        let mut manifest = RunManifest::new(command, json!({ "args": args }));
        manifest.argv = argv.to_vec();
        Run {
            manifest,
            inputs: Vec::new(),
        }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest
            .input(path)
            .with_context(|| format!("reading {}", path.display()))?;
        self.inputs.push(path.to_path_buf());
        Ok(())
    }

    fn config(&mut self, key: &str, value: impl Serialize) {
        self.manifest.config[key] = serde_json::to_value(value).expect("config serializes");
    }

    fn seed(&mut self, name: &str, value: u64) {
        self.manifest.seed(name, value);
    }

    /// Refuses to write over an input.
    fn guard(&self, out: &Path) -> Result<()> {
        let o = fs::canonicalize(out).ok();
        for i in &self.inputs {
            if o.is_some() && fs::canonicalize(i).ok() == o {
                bail!("output {} would overwrite an input", out.display());
            }
        }
        Ok(())
    }

    /// Records `outputs` (files, or every file under a directory) and writes
    /// the manifest to `at`.
    fn finish(self, outputs: &[&Path], at: &Path) -> Result<()> {
        self.finish_except(outputs, at, &[])
    }

    /// As [`Run::finish`], leaving out files such as cost telemetry that a
    /// replay is not expected to reproduce.
    fn finish_except(mut self, outputs: &[&Path], at: &Path, skip: &[PathBuf]) -> Result<()> {
        for o in outputs {
            if o.is_dir() {
                let mut files = Vec::new();
                walk(o, &mut files)?;
                files.retain(|f| f != at && !skip.contains(f));
                for f in files {
                    self.manifest.output(&f)?;
                }
            } else {
                self.manifest.output(o)?;
            }
        }
        self.manifest.write(at)?;
        Ok(())
    }
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    ensure_parent(path)?;
    Ok(BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_corpus_in(run: &mut Run, path: &Path) -> Result<Corpus> {
    run.input(path)?;
    Ok(load_corpus(path)?)
}

fn load_split(run: &mut Run, corpus: &Corpus, path: &Path) -> Result<SplitResult> {
    run.input(path)?;
    let m: SplitManifest = serde_json::from_str(&read_text(path)?)
        .with_context(|| format!("parsing {}", path.display()))?;
    run.seed("split", m.spec.seed);
    Ok(SplitResult::from_manifest(corpus, &m)?)
}

fn load_ckpt(run: &mut Run, dir: &Path) -> Result<Checkpoint> {
    run.input(&dir.join(asag::classifier::MANIFEST_FILE))?;
    run.input(&dir.join(asag::classifier::PARAMS_FILE))?;
    Ok(load_checkpoint(dir)?)
}

fn out_dir(given: &Option<PathBuf>, command: &str, config: &serde_json::Value) -> PathBuf {
    given
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(run_dir_name(command, config)))
}

fn question_records(corpus: &Corpus, question: Option<&str>) -> Result<Vec<ResponseRecord>> {
    if let Some(q) = question {
        if corpus.question(q).is_none() {
            bail!("question {q:?} is not in the corpus");
        }
    }
    Ok(corpus
        .records()
        .iter()
        .filter(|r| question.is_none_or(|q| r.question.id == q))
        .cloned()
        .collect())
}

fn tier_records(
    split: &SplitResult,
    tier: TierArg,
    question: Option<&str>,
) -> Result<Vec<ResponseRecord>> {
    let tier = match tier {
        TierArg::Train => Tier::Train,
        TierArg::Validation => Tier::Validation,
        TierArg::Test => Tier::Test,
        TierArg::All => bail!("--tier all does not use a split"),
    };
    if let Some(q) = question {
        if split.question(q).is_none() {
            bail!("question {q:?} is not in the split");
        }
    }
    Ok(split
        .questions
        .iter()
        .filter(|qs| question.is_none_or(|q| qs.question.id == q))
        .flat_map(|qs| qs.tier(tier).iter().cloned())
        .collect())
}

fn cmd_synth(a: &SynthArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("synth", a, argv);
    let mut spec = match &a.spec {
        Some(p) => {
            run.input(p)?;
            SynthSpec::from_toml(&read_text(p)?)?
        }
        None => SynthSpec::published_counts(0),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    spec.validate()?;
    run.seed("synth", spec.seed);
    run.config("spec", &spec);
    run.guard(&a.out)?;
    let corpus = generate_synthetic_corpus(&spec)?;
    ensure_parent(&a.out)?;
    corpus
        .write_jsonl(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("wrote {} records to {}", corpus.len(), a.out.display());
    run.finish(&[&a.out], &RunManifest::path_for(&a.out))
}

fn cmd_split(a: &SplitArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("split", a, argv);
    let corpus = load_corpus_in(&mut run, &a.corpus)?;
    let spec = SplitSpec {
        train_ratio: a.train_ratio,
        val_ratio: a.val_ratio,
        seed: a.seed,
    };
    spec.validate()?;
    run.seed("split", a.seed);
    run.guard(&a.out)?;
    let split = split_by_student(&corpus, &spec)?;
    let m = split.manifest();
    eprintln!(
        "students: {} train, {} validation, {} test",
        m.train.len(),
        m.validation.len(),
        m.test.len()
    );
    write_json(&a.out, &m)?;
    run.finish(&[&a.out], &RunManifest::path_for(&a.out))
}

fn cmd_train(a: &TrainArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("train", a, argv);
    let corpus = load_corpus_in(&mut run, &a.corpus)?;
    let split = load_split(&mut run, &corpus, &a.split)?;
    let config = a.classifier.resolve(&mut run)?;
    run.config("classifier", &config);
    run.seed("classifier", config.seed);
    run.seed("schedule", a.schedule_seed);
    let backend = config.backend.build();
    let base = match &a.base {
        Some(p) => Some(load_ckpt(&mut run, p)?),
        None => None,
    };
    run.guard(&a.out)?;
    let qs = split
        .question(&a.question)
        .ok_or_else(|| anyhow!("question {:?} is not in the split", a.question))?;
    if let Some(b) = &base {
        if b.lineage.contains_question(&a.question) {
            bail!(
                "base model {} has already been fine-tuned on {}",
                b.model_name(),
                a.question
            );
        }
    }
    let schedule = SubsetSchedule::build(&qs.train, a.schedule_seed, a.step)?;
    let point = schedule
        .point(a.fraction)
        .ok_or_else(|| anyhow!("fraction {} is not on the {} grid", a.fraction, a.step))?;
    let subset = schedule
        .subset(&qs.train, a.fraction)
        .expect("point exists");
    let init = base.as_ref().map_or(Init::Fresh, Init::From);
    let (ckpt, report) = train(
        backend.as_ref(),
        init,
        &subset,
        &qs.validation,
        &config,
        FineTuneStep::new(&a.question, point.fraction),
    )?;
    let metrics = asag::classifier::evaluate(backend.as_ref(), &ckpt, &qs.test)?;
    save_checkpoint(&ckpt, &a.out)?;
    write_json(
        &a.out.join("training.json"),
        &json!({ "model": ckpt.model_name(), "subset_hash": point.hash, "report": report, "test_metrics": metrics }),
    )?;
    eprintln!(
        "{}: test accuracy {:.2}% (best epoch {})",
        ckpt.model_name(),
        100.0 * metrics.accuracy,
        report.best_epoch
    );
    run.finish(&[&a.out], &a.out.join("run.json"))
}

const PRED_HEADER: [&str; 8] = [
    "model",
    "record_id",
    "question",
    "human_label",
    "predicted_label",
    "p_correct",
    "p_incomplete",
    "p_incorrect",
];

fn cmd_predict(a: &PredictArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("predict", a, argv);
    let ckpt = load_ckpt(&mut run, &a.checkpoint)?;
    let corpus = load_corpus_in(&mut run, &a.corpus)?;
    let records = match (a.tier, &a.split) {
        (TierArg::All, _) => question_records(&corpus, a.question.as_deref())?,
        (t, Some(p)) => {
            let split = load_split(&mut run, &corpus, p)?;
            tier_records(&split, t, a.question.as_deref())?
        }
        (_, None) => bail!("--split is required unless --tier all"),
    };
    run.guard(&a.out)?;
    let backend = resolve_backend(&ckpt.backend_id, &ckpt.backend_options)?;
    let preds = predict(backend.as_ref(), &ckpt, &records)?;
    let model = ckpt.model_name();
    let mut w = csv::Writer::from_writer(create(&a.out)?);
    w.write_record(PRED_HEADER)?;
    for (r, p) in records.iter().zip(&preds.items) {
        w.write_record([
            model.clone(),
            r.record_id(),
            r.question.id.clone(),
            r.label.title().to_string(),
            p.label.title().to_string(),
            format!("{:.6}", p.scores[0]),
            format!("{:.6}", p.scores[1]),
            format!("{:.6}", p.scores[2]),
        ])?;
    }
    w.flush()?;
    drop(w);
    run.finish(&[&a.out], &RunManifest::path_for(&a.out))
}

struct PredRow {
    record_id: String,
    human: Label,
    predicted: Label,
}

fn read_predictions(run: &mut Run, path: &Path) -> Result<(String, Vec<PredRow>)> {
    run.input(path)?;
    let mut rdr = csv::Reader::from_reader(BufReader::new(fs::File::open(path)?));
    let header = rdr.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("{}: missing column {name}", path.display()))
    };
    let (cm, ci, ch, cp) = (
        col("model")?,
        col("record_id")?,
        col("human_label")?,
        col("predicted_label")?,
    );
    let mut model = None;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let label = |c: usize| {
            let s = rec.get(c).unwrap_or("");
            Label::parse(s)
                .ok_or_else(|| anyhow!("{} row {}: unknown label {s:?}", path.display(), i + 1))
        };
        let m = rec.get(cm).unwrap_or("").to_string();
        match &model {
            None => model = Some(m),
            Some(prev) if *prev != m => bail!("{}: rows from more than one model", path.display()),
            _ => {}
        }
        rows.push(PredRow {
            record_id: rec.get(ci).unwrap_or("").to_string(),
            human: label(ch)?,
            predicted: label(cp)?,
        });
    }
    let model = model.ok_or_else(|| anyhow!("{}: no predictions", path.display()))?;
    Ok((model, rows))
}

fn cmd_sweep(a: &SweepArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("sweep", a, argv);
    let corpus = load_corpus_in(&mut run, &a.corpus)?;
    let split = load_split(&mut run, &corpus, &a.split)?;
    let config = a.classifier.resolve(&mut run)?;
    run.config("classifier", &config);
    run.seed("classifier", config.seed);
    run.seed("schedule", a.schedule_seed);
    if a.parallel == 0 {
        bail!("--parallel must be >= 1");
    }
    let backend = config.backend.build();
    let base = match &a.base {
        Some(p) => load_ckpt(&mut run, p)?,
        None => Checkpoint::fresh(backend.as_ref(), config.seed),
    };
    run.guard(&a.out)?;
    let opts = SweepOptions {
        fractions: a.fractions.clone(),
        step: a.step,
        schedule_seed: a.schedule_seed,
        max_parallel: a.parallel,
    };
    let curve = run_fraction_sweep(backend.as_ref(), &base, &a.question, &split, &config, &opts)?;
    write_curves_csv(&[&curve], create(&a.out)?)?;
    eprintln!("{}: {} points", curve.model_name, curve.points.len());
    run.finish(&[&a.out], &RunManifest::path_for(&a.out))
}

fn cmd_chain(a: &ChainArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("chain", a, argv);
    let corpus = load_corpus_in(&mut run, &a.corpus)?;
    let split = load_split(&mut run, &corpus, &a.split)?;
    let mut spec = match &a.spec {
        Some(p) => {
            run.input(p)?;
            toml::from_str::<CurriculumSpec>(&read_text(p)?)
                .map_err(|e| anyhow!("{}: {e}", p.display()))?
        }
        None => CurriculumSpec::default_chain(ClassifierConfig::default()),
    };
    spec.classifier = a.classifier.overlay(spec.classifier);
    if let Some(p) = &a.classifier.config {
        bail!(
            "chain takes classifier settings from --spec, not --config {}",
            p.display()
        );
    }
    if let Some(v) = a.schedule_seed {
        spec.schedule_seed = v;
    }
    if let Some(v) = a.parallel {
        spec.max_parallel = v;
    }
    if let Some(v) = a.select_k {
        spec.select_k = v;
    }
    spec.validate()?;
    run.config("spec", &spec);
    run.seed("classifier", spec.classifier.seed);
    run.seed("schedule", spec.schedule_seed);
    let dir = out_dir(&a.out, "chain", &run.manifest.config);
    run.guard(&dir)?;
    let backend = spec.classifier.backend.build();
    let result = run_chain(backend.as_ref(), &spec, &split)?;
    let manifest = result.write(&dir)?;
    for s in &manifest.steps {
        eprintln!(
            "{} at {:.1}%: test accuracy {:.2}%",
            s.model_name,
            100.0 * s.fraction,
            100.0 * s.metrics.accuracy
        );
    }
    println!("{}", dir.display());
    run.finish(&[&dir], &dir.join("manifest.json"))
}

fn load_curves(run: &mut Run, paths: &[PathBuf]) -> Result<Vec<NamedCurve>> {
    let mut out = Vec::new();
    for p in paths {
        run.input(p)?;
        out.extend(read_curves_csv(BufReader::new(fs::File::open(p)?))?);
    }
    if out.is_empty() {
        bail!("no curves in input");
    }
    Ok(out)
}

fn cmd_select(a: &SelectArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("select", a, argv);
    let curves = load_curves(&mut run, &a.curves)?;
    let summaries = curves
        .iter()
        .map(|c| summarize_curve(&c.model, &c.points, a.k))
        .collect::<Result<Vec<_>, _>>()?;
    match &a.out {
        Some(o) => {
            run.guard(o)?;
            write_json(o, &summaries)?;
            run.finish(&[o], &RunManifest::path_for(o))
        }
        None => print_json(&summaries),
    }
}

fn single_curve(run: &mut Run, path: &Path) -> Result<NamedCurve> {
    let mut c = load_curves(run, &[path.to_path_buf()])?;
    if c.len() != 1 {
        bail!("{} holds {} curves; expected one", path.display(), c.len());
    }
    Ok(c.remove(0))
}

fn cmd_advantage(a: &AdvantageArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("advantage", a, argv);
    if a.tolerance < 0.0 {
        bail!("--tolerance must be >= 0");
    }
    let scratch = single_curve(&mut run, &a.scratch)?;
    let transfer = single_curve(&mut run, &a.transfer)?;
    if scratch.question != transfer.question {
        bail!(
            "curves are for different questions ({} vs {})",
            scratch.question,
            transfer.question
        );
    }
    let row = advantage_row(&scratch, &transfer, a.tolerance)?;
    match &a.out {
        Some(o) => {
            run.guard(o)?;
            write_json(o, &row)?;
            run.finish(&[o], &RunManifest::path_for(o))
        }
        None => print_json(&row),
    }
}

fn parse_confusion(s: &str) -> Result<ConfusionMatrix> {
    let rows: Vec<&str> = s.split(';').collect();
    if rows.len() != 3 {
        bail!("confusion matrix needs 3 rows separated by ';'");
    }
    let mut counts = [[0u64; 3]; 3];
    for (i, r) in rows.iter().enumerate() {
        let cells: Vec<&str> = r.split(',').collect();
        if cells.len() != 3 {
            bail!("confusion row {} needs 3 counts", i + 1);
        }
        for (j, c) in cells.iter().enumerate() {
            counts[i][j] = c
                .trim()
                .parse()
                .with_context(|| format!("confusion cell {c:?}"))?;
        }
    }
    Ok(ConfusionMatrix::from_counts(counts))
}

fn cmd_metrics(a: &MetricsArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("metrics", a, argv);
    let (model, report): (String, MetricsReport) = match (&a.predictions, &a.confusion) {
        (Some(p), _) => {
            let (model, rows) = read_predictions(&mut run, p)?;
            let truth: Vec<Label> = rows.iter().map(|r| r.human).collect();
            let pred: Vec<Label> = rows.iter().map(|r| r.predicted).collect();
            (model, macro_metrics(&confusion(&truth, &pred)?)?)
        }
        (None, Some(c)) => ("matrix".to_string(), macro_metrics(&parse_confusion(c)?)?),
        (None, None) => bail!("give --predictions or --confusion"),
    };
    match &a.out {
        Some(o) => {
            run.guard(o)?;
            let mut w = csv::Writer::from_writer(create(o)?);
            w.write_record(asag::metrics::CSV_HEADER)?;
            w.write_record(asag::metrics::csv_row(&model, None, &report))?;
            w.flush()?;
            drop(w);
            run.finish(&[o], &RunManifest::path_for(o))
        }
        None => print_json(&json!({ "model": model, "metrics": report })),
    }
}

/// Records of `rows`, looked up in the corpus, in file order.
fn records_for(corpus: &Corpus, rows: &[PredRow]) -> Result<Vec<ResponseRecord>> {
    let by_id: HashMap<String, &ResponseRecord> = corpus
        .records()
        .iter()
        .map(|r| (r.record_id(), r))
        .collect();
    rows.iter()
        .map(|p| {
            let r = by_id
                .get(&p.record_id)
                .ok_or_else(|| anyhow!("record {} is not in the corpus", p.record_id))?;
            if r.label != p.human {
                bail!(
                    "record {}: human label differs from the corpus",
                    p.record_id
                );
            }
            Ok((*r).clone())
        })
        .collect()
}

/// Predictions of `rows` reordered to follow `records`.
fn align(records: &[ResponseRecord], model: &str, rows: &[PredRow]) -> Result<ModelPredictions> {
    let by_id: HashMap<&str, Label> = rows
        .iter()
        .map(|r| (r.record_id.as_str(), r.predicted))
        .collect();
    let labels = records
        .iter()
        .map(|r| {
            by_id
                .get(r.record_id().as_str())
                .copied()
                .ok_or_else(|| anyhow!("{model} has no prediction for {}", r.record_id()))
        })
        .collect::<Result<Vec<_>>>()?;
    if rows.len() != records.len() {
        bail!(
            "{model} covers {} records, expected {}",
            rows.len(),
            records.len()
        );
    }
    Ok(ModelPredictions {
        model: model.to_string(),
        labels,
    })
}

fn cmd_errors(a: &ErrorsArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("errors", a, argv);
    let corpus = load_corpus_in(&mut run, &a.corpus)?;
    let (ma, ra) = read_predictions(&mut run, &a.a)?;
    let (mb, rb) = read_predictions(&mut run, &a.b)?;
    let records = records_for(&corpus, &ra)?;
    let pa = align(&records, &ma, &ra)?;
    let pb = align(&records, &mb, &rb)?;
    let dir = out_dir(&a.out, "errors", &run.manifest.config);
    run.guard(&dir)?;
    fs::create_dir_all(&dir)?;
    let mut questions: Vec<String> = records.iter().map(|r| r.question.id.clone()).collect();
    questions.dedup();
    questions.sort();
    questions.dedup();
    let mut summary = Vec::new();
    for q in &questions {
        let idx: Vec<usize> = (0..records.len())
            .filter(|&i| &records[i].question.id == q)
            .collect();
        let truth: Vec<Label> = idx.iter().map(|&i| records[i].label).collect();
        let la: Vec<Label> = idx.iter().map(|&i| pa.labels[i]).collect();
        let lb: Vec<Label> = idx.iter().map(|&i| pb.labels[i]).collect();
        let shared = shared_error_table(&truth, &la, &lb)?;
        let specific = model_specific_table(&truth, &la, &lb)?;
        shared.write_csv(q, create(&dir.join(format!("shared_{q}.csv")))?)?;
        specific.write_csv(q, create(&dir.join(format!("model_specific_{q}.csv")))?)?;
        summary.push(json!({
            "question": q,
            "records": truth.len(),
            "both_right": both_right(&truth, &la, &lb)?,
            "shared_errors": shared.total(),
            "model_specific_errors": specific.total(),
        }));
    }
    write_json(
        &dir.join("summary.json"),
        &json!({ "model_a": ma, "model_b": mb, "questions": summary }),
    )?;
    println!("{}", dir.display());
    run.finish(&[&dir], &dir.join("manifest.json"))
}

fn cmd_review_export(a: &ReviewExportArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("review-export", a, argv);
    let corpus = load_corpus_in(&mut run, &a.corpus)?;
    let mut sets = Vec::new();
    for p in &a.predictions {
        sets.push(read_predictions(&mut run, p)?);
    }
    let records = records_for(&corpus, &sets[0].1)?;
    let models = sets
        .iter()
        .map(|(m, rows)| align(&records, m, rows))
        .collect::<Result<Vec<_>>>()?;
    run.guard(&a.out)?;
    let d = find_disagreements(&records, &models)?;
    export_review_queue(&d, create(&a.out)?)?;
    eprintln!(
        "{} of {} records queued for review",
        d.records.len(),
        records.len()
    );
    run.finish(&[&a.out], &RunManifest::path_for(&a.out))
}

fn cmd_review_apply(a: &ReviewApplyArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("review-apply", a, argv);
    let corpus = load_corpus_in(&mut run, &a.corpus)?;
    run.input(&a.review)?;
    let decisions = parse_review_file(BufReader::new(fs::File::open(&a.review)?))?;
    run.guard(&a.out)?;
    let mut overlay = ReviewOverlay::default();
    overlay.apply(&corpus, &decisions)?;
    let reviewed = overlay.reviewed_corpus(&corpus);
    ensure_parent(&a.out)?;
    reviewed.write_jsonl(&a.out)?;
    let overlay_path = a.out.with_extension("overlay.json");
    write_json(&overlay_path, &overlay)?;
    eprintln!(
        "{} decisions, {} miscodes",
        overlay.decisions.len(),
        overlay.miscodes()
    );
    run.finish(&[&a.out, &overlay_path], &RunManifest::path_for(&a.out))
}

fn cmd_prompt_export(a: &PromptExportArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("prompt-export", a, argv);
    let corpus = load_corpus_in(&mut run, &a.corpus)?;
    let records = question_records(&corpus, a.question.as_deref())?;
    run.guard(&a.out)?;
    let mut w = create(&a.out)?;
    for r in &records {
        let b = prompt_for_record(r)?;
        let line = json!({ "record_id": r.record_id(), "system": b.system, "user": b.user });
        use std::io::Write;
        writeln!(w, "{line}")?;
    }
    drop(w);
    run.finish(&[&a.out], &RunManifest::path_for(&a.out))
}

fn chat_client(a: &LlmRunArgs, run: &mut Run) -> Result<Box<dyn ChatClient>> {
    if let Some(p) = &a.mock {
        run.input(p)?;
        return Ok(Box::new(MockClient::from_fixture(p)?));
    }
    if a.openai {
        #[cfg(feature = "openai")]
        return Ok(Box::new(
            asag::llmharness::client::OpenAiClient::from_env().map_err(|e| anyhow!("{e}"))?,
        ));
        #[cfg(not(feature = "openai"))]
        bail!("this build has no HTTP client; rebuild with --features openai");
    }
    bail!("choose a client: --mock <script.json> or --openai")
}

fn cmd_llm_run(a: &LlmRunArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("llm-run", a, argv);
    let corpus = load_corpus_in(&mut run, &a.corpus)?;
    let mut records = question_records(&corpus, a.question.as_deref())?;
    if let Some(n) = a.limit {
        records.truncate(n);
    }
    if records.is_empty() {
        bail!("no records to grade");
    }
    if a.temperatures.is_empty() {
        bail!("give at least one temperature");
    }
    let client = chat_client(a, &mut run)?;
    let bundles = records
        .iter()
        .map(prompt_for_record)
        .collect::<Result<Vec<_>, _>>()?;
    let policy = match a.unparseable {
        PolicyArg::Abstain => UnparseablePolicy::Abstain,
        PolicyArg::Exclude => UnparseablePolicy::Exclude,
    };
    let dir = out_dir(&a.out, "llm-run", &run.manifest.config);
    run.guard(&dir)?;
    fs::create_dir_all(&dir)?;
    let truth: Vec<Label> = records.iter().map(|r| r.label).collect();
    let mut reports = Vec::new();
    let mut runs = Vec::new();
    let mut costs = Vec::new();
    let mut metrics = csv::Writer::from_writer(create(&dir.join("metrics.csv"))?);
    metrics.write_record([
        "model",
        "temperature",
        "accuracy",
        "precision",
        "recall",
        "f1",
        "unparseable",
    ])?;
    for &t in &a.temperatures {
        let config = RunConfig {
            model: a.model.clone(),
            temperature: t,
            max_concurrency: a.concurrency,
            retry: RetryPolicy {
                max_attempts: a.max_attempts,
                backoff_ms: a.backoff_ms,
            },
            cache_dir: a.cache_dir.clone(),
        };
        let result = run_batch(client.as_ref(), &bundles, &config)?;
        let grades = result.grades();
        let report = score_grades(&truth, &grades, policy)?;
        let mut w = csv::Writer::from_writer(create(&dir.join(format!("grades_t{t}.csv")))?);
        w.write_record(["record_id", "human_label", "grade", "completion", "error"])?;
        for (r, o) in records.iter().zip(&result.outcomes) {
            w.write_record([
                r.record_id(),
                r.label.title().to_string(),
                o.grade
                    .parsed
                    .label()
                    .map_or("unparseable", Label::as_str)
                    .to_string(),
                o.grade.raw.clone(),
                o.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        let unparseable = result.needs_mapping().len();
        let mut row = asag::metrics::csv_row(&a.model, None, &report);
        row[1] = format!("{t}");
        row.push(unparseable.to_string());
        metrics.write_record(&row)?;
        runs.push(json!({ "temperature": t, "metrics": report, "unparseable": unparseable }));
        costs.push(json!({ "temperature": t, "totals": result.ledger.totals(), "requests": result.ledger.entries }));
        reports.push(report);
    }
    metrics.flush()?;
    drop(metrics);
    let summary = aggregate_temperature_runs(&reports)?;
    write_json(
        &dir.join("summary.json"),
        &json!({ "model": a.model, "across_temperatures": summary, "runs": runs }),
    )?;
    eprintln!(
        "{}: accuracy {:.2} ± {:.2} over {} temperatures",
        a.model, summary.accuracy.0, summary.accuracy.1, summary.runs
    );
    let cost = dir.join("cost.json");
    write_json(&cost, &costs)?;
    println!("{}", dir.display());
    run.finish_except(&[&dir], &dir.join("manifest.json"), &[cost])
}

fn cmd_finetune_export(a: &FinetuneExportArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("finetune-export", a, argv);
    let corpus = load_corpus_in(&mut run, &a.corpus)?;
    let records = match (a.tier, &a.split) {
        (TierArg::All, _) | (_, None) => question_records(&corpus, a.question.as_deref())?,
        (t, Some(p)) => {
            let split = load_split(&mut run, &corpus, p)?;
            tier_records(&split, t, a.question.as_deref())?
        }
    };
    run.guard(&a.out)?;
    let n = export_finetune_dataset(&records, create(&a.out)?)?;
    eprintln!("wrote {n} examples");
    run.finish(&[&a.out], &RunManifest::path_for(&a.out))
}

fn cmd_zipf(a: &ZipfArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("zipf", a, argv);
    let corpus = load_corpus_in(&mut run, &a.corpus)?;
    let records = question_records(&corpus, a.question.as_deref())?;
    let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
    let unit = match a.unit {
        UnitArg::Tokens => Unit::Tokens,
        UnitArg::Responses => Unit::Responses,
    };
    let norm = Normalization {
        case_fold: !a.keep_case,
        strip_punctuation: a.strip_punctuation,
        ..Normalization::default()
    };
    run.guard(&a.out)?;
    let rf = rank_frequency(&units(&texts, unit), &norm)?;
    let fit = fit_zipf(
        &rf,
        &FitOptions {
            min_rank: a.min_rank,
            max_rank: a.max_rank,
        },
    )?;
    rf.write_csv(create(&a.out)?)?;
    print_json(&json!({
        "distinct": rf.len(),
        "total": rf.total,
        "singleton_fraction": singleton_fraction(&rf)?,
        "fit": fit,
    }))?;
    run.finish(&[&a.out], &RunManifest::path_for(&a.out))
}

fn cmd_report(a: &ReportArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("report", a, argv);
    if a.tolerance < 0.0 {
        bail!("--tolerance must be >= 0");
    }
    let curves = load_curves(&mut run, &a.curves)?;
    let dir = out_dir(&a.out, "report", &run.manifest.config);
    run.guard(&dir)?;
    let files = write_report(&curves, a.k, a.tolerance, &dir)?;
    for p in &files.plots {
        eprintln!("plot: {}", p.display());
    }
    println!("{}", dir.display());
    run.finish(&[&dir], &dir.join("manifest.json"))
}

fn cmd_replay(a: &ReplayArgs) -> Result<()> {
    let recorded: RunManifest = serde_json::from_str(&read_text(&a.manifest)?)
        .with_context(|| format!("parsing {}", a.manifest.display()))?;
    if recorded.command == "replay" || recorded.argv.is_empty() {
        bail!(
            "{} does not record a replayable command",
            a.manifest.display()
        );
    }
    for i in &recorded.inputs {
        let now =
            FileDigest::of(Path::new(&i.path)).with_context(|| format!("reading {}", i.path))?;
        if now.sha256 != i.sha256 {
            bail!("input {} changed since the recorded run", i.path);
        }
    }
    let mut argv = vec!["asag".to_string()];
    argv.extend(recorded.argv.iter().cloned());
    let cli = Cli::try_parse_from(&argv)
        .map_err(|e| anyhow!("recorded arguments no longer parse: {e}"))?;
    dispatch(cli, &recorded.argv)?;
    let mut mismatched = Vec::new();
    for o in &recorded.outputs {
        let now =
            FileDigest::of(Path::new(&o.path)).with_context(|| format!("reading {}", o.path))?;
        if now.sha256 != o.sha256 {
            mismatched.push(o.path.clone());
        }
    }
    if !mismatched.is_empty() {
        bail!(
            "replay produced different outputs: {}",
            mismatched.join(", ")
        );
    }
    eprintln!("replay matched {} outputs", recorded.outputs.len());
    Ok(())
}

fn dispatch(cli: Cli, argv: &[String]) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, argv),
        Command::Split(a) => cmd_split(a, argv),
        Command::Train(a) => cmd_train(a, argv),
        Command::Predict(a) => cmd_predict(a, argv),
        Command::Sweep(a) => cmd_sweep(a, argv),
        Command::Chain(a) => cmd_chain(a, argv),
        Command::Select(a) => cmd_select(a, argv),
        Command::Advantage(a) => cmd_advantage(a, argv),
        Command::Metrics(a) => cmd_metrics(a, argv),
        Command::Errors(a) => cmd_errors(a, argv),
        Command::ReviewExport(a) => cmd_review_export(a, argv),
        Command::ReviewApply(a) => cmd_review_apply(a, argv),
        Command::PromptExport(a) => cmd_prompt_export(a, argv),
        Command::LlmRun(a) => cmd_llm_run(a, argv),
        Command::FinetuneExport(a) => cmd_finetune_export(a, argv),
        Command::Zipf(a) => cmd_zipf(a, argv),
        Command::Report(a) => cmd_report(a, argv),
        Command::Replay(a) => cmd_replay(a),
    }
}

/// 2 when an I/O failure caused the error, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    let io = err
        .chain()
        .any(|e| e.downcast_ref::<std::io::Error>().is_some());
    if io {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match dispatch(cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
