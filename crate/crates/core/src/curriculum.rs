//! Scratch baselines, fraction sweeps and sequential near-domain fine-tuning
//! chains.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{
    evaluate, save_checkpoint, train, Backend, Checkpoint, ClassifierConfig, ClassifierError,
    FineTuneStep, Init, Lineage, TrainingReport,
};
use crate::metrics::MetricsReport;
use crate::partitioning::{
    PartitionError, QuestionSplit, SplitResult, SubsetSchedule, DEFAULT_FRACTION_STEP,
};
use crate::selection::{select_model, CurvePoint, SelectionError, SelectionOutcome};
use crate::text::sha256_hex;

#[derive(Debug, Error)]
pub enum CurriculumError {
    #[error("question {0:?} is not in the split")]
    MissingQuestion(String),
    #[error("base model {model} has already been fine-tuned on {question:?}")]
    LineageConflict { model: String, question: String },
    #[error("invalid curriculum: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Which nested subsets a sweep trains on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    /// Fractions to train at; `None` means every grid fraction.
    pub fractions: Option<Vec<f64>>,
    pub step: f64,
    pub schedule_seed: u64,
    /// Sweep points trained concurrently.
    pub max_parallel: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            fractions: None,
            step: DEFAULT_FRACTION_STEP,
            schedule_seed: 0,
            max_parallel: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub fraction: f64,
    pub subset_hash: String,
    pub train_size: usize,
    pub metrics: MetricsReport,
    pub report: TrainingReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub question: String,
    pub base_lineage: Lineage,
    /// Name of the models on this curve, e.g. `BMQ1Q2`.
    pub model_name: String,
    pub schedule_seed: u64,
    pub points: Vec<SweepPoint>,
}

impl SweepCurve {
    /// Accuracy in percentage points against fraction.
    pub fn accuracy_points(&self) -> Vec<CurvePoint> {
        self.points
            .iter()
            .map(|p| CurvePoint::new(p.fraction, 100.0 * p.metrics.accuracy))
            .collect()
    }

    pub fn point(&self, fraction: f64) -> Option<&SweepPoint> {
        self.points
            .iter()
            .find(|p| (p.fraction - fraction).abs() < 1e-9)
    }
}

pub const CURVE_CSV_HEADER: [&str; 7] = [
    "model",
    "question",
    "fraction_pct",
    "accuracy",
    "precision",
    "recall",
    "f1",
];

/// Learning-curve rows with metrics as percentages.
pub fn write_curves_csv<W: std::io::Write>(curves: &[&SweepCurve], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CURVE_CSV_HEADER)?;
    for c in curves {
        for p in &c.points {
            let m = &p.metrics;
            w.write_record([
                c.model_name.clone(),
                c.question.clone(),
                format!("{:.1}", 100.0 * p.fraction),
                format!("{:.2}", 100.0 * m.accuracy),
                format!("{:.2}", 100.0 * m.macro_precision),
                format!("{:.2}", 100.0 * m.macro_recall),
                format!("{:.2}", 100.0 * m.macro_f1),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn question_split<'a>(
    split: &'a SplitResult,
    question: &str,
) -> Result<&'a QuestionSplit, CurriculumError> {
    split
        .question(question)
        .ok_or_else(|| CurriculumError::MissingQuestion(question.to_string()))
}

fn check_lineage(base: &Checkpoint, question: &str) -> Result<(), CurriculumError> {
    if base.lineage.contains_question(question) {
        return Err(CurriculumError::LineageConflict {
            model: base.model_name(),
            question: question.to_string(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ScratchResult {
    pub checkpoint: Checkpoint,
    pub report: TrainingReport,
    pub metrics: MetricsReport,
}

/// Fine-tunes a fresh base model on all of the question's training tier and
/// evaluates it on that question's test tier.
pub fn run_scratch(
    backend: &dyn Backend,
    question: &str,
    split: &SplitResult,
    config: &ClassifierConfig,
) -> Result<ScratchResult, CurriculumError> {
    let qs = question_split(split, question)?;
    let (checkpoint, report) = train(
        backend,
        Init::Fresh,
        &qs.train,
        &qs.validation,
        config,
        FineTuneStep::new(question, 1.0),
    )?;
    let metrics = evaluate(backend, &checkpoint, &qs.test)?;
    Ok(ScratchResult {
        checkpoint,
        report,
        metrics,
    })
}

fn sweep_fractions(
    schedule: &SubsetSchedule,
    opts: &SweepOptions,
) -> Result<Vec<f64>, CurriculumError> {
    let Some(fr) = &opts.fractions else {
        return Ok(schedule.fractions());
    };
    if fr.is_empty() {
        return Err(CurriculumError::InvalidSpec("empty fraction list".into()));
    }
    if fr.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CurriculumError::InvalidSpec(
            "sweep fractions must be strictly increasing".into(),
        ));
    }
    for &f in fr {
        if !(0.0..=1.0).contains(&f) {
            return Err(PartitionError::FractionOutOfRange(f).into());
        }
        if schedule.point(f).is_none() {
            return Err(CurriculumError::InvalidSpec(format!(
                "fraction {f} is not on the {} grid",
                opts.step
            )));
        }
    }
    Ok(fr.clone())
}

/// Trains `base` on the scheduled subset at `fraction` and evaluates it.
fn train_at(
    backend: &dyn Backend,
    base: &Checkpoint,
    qs: &QuestionSplit,
    schedule: &SubsetSchedule,
    fraction: f64,
    config: &ClassifierConfig,
) -> Result<(Checkpoint, SweepPoint), CurriculumError> {
    let point = schedule
        .point(fraction)
        .expect("fraction validated against schedule");
    let subset = schedule
        .subset(&qs.train, fraction)
        .expect("fraction validated");
    let (ckpt, report) = train(
        backend,
        Init::From(base),
        &subset,
        &qs.validation,
        config,
        FineTuneStep::new(qs.question.id.clone(), point.fraction),
    )?;
    let metrics = evaluate(backend, &ckpt, &qs.test)?;
    Ok((
        ckpt,
        SweepPoint {
            fraction: point.fraction,
            subset_hash: point.hash.clone(),
            train_size: subset.len(),
            metrics,
            report,
        },
    ))
}

/// Fine-tunes `base` separately at each fraction of the question's nested
/// subset schedule. Every point restarts from `base`; the 0% point evaluates
/// `base` unchanged.
pub fn run_fraction_sweep(
    backend: &dyn Backend,
    base: &Checkpoint,
    question: &str,
    split: &SplitResult,
    config: &ClassifierConfig,
    opts: &SweepOptions,
) -> Result<SweepCurve, CurriculumError> {
    check_lineage(base, question)?;
    let qs = question_split(split, question)?;
    let schedule = SubsetSchedule::build(&qs.train, opts.schedule_seed, opts.step)?;
    let fractions = sweep_fractions(&schedule, opts)?;
    let run = |f: &f64| train_at(backend, base, qs, &schedule, *f, config).map(|(_, p)| p);
    let points: Vec<SweepPoint> = if opts.max_parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.max_parallel)
            .build()
            .map_err(|e| CurriculumError::InvalidSpec(format!("thread pool: {e}")))?;
        pool.install(|| fractions.par_iter().map(run).collect::<Result<_, _>>())?
    } else {
        fractions.iter().map(run).collect::<Result<_, _>>()?
    };
    Ok(SweepCurve {
        question: question.to_string(),
        model_name: base
            .lineage
            .extended(FineTuneStep::new(question, 0.0))
            .model_name(),
        base_lineage: base.lineage.clone(),
        schedule_seed: opts.schedule_seed,
        points,
    })
}

/// How one chain step is trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StepMode {
    /// All of the training tier.
    Full,
    /// Fraction sweep; the step's model is the selected point unless
    /// `select_fraction` pins one.
    Sweep {
        #[serde(default)]
        fractions: Option<Vec<f64>>,
        #[serde(default)]
        select_fraction: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStepSpec {
    pub question: String,
    #[serde(flatten)]
    pub mode: StepMode,
}

fn default_k() -> usize {
    5
}
fn default_parallel() -> usize {
    1
}
fn default_step() -> f64 {
    DEFAULT_FRACTION_STEP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSpec {
    pub steps: Vec<ChainStepSpec>,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub schedule_seed: u64,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_k")]
    pub select_k: usize,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
}

impl CurriculumSpec {
    /// Q1 on full data, then sweeps over Q2 and Q3.
    pub fn default_chain(classifier: ClassifierConfig) -> CurriculumSpec {
        let sweep = || StepMode::Sweep {
            fractions: None,
            select_fraction: None,
        };
        CurriculumSpec {
            steps: vec![
                ChainStepSpec {
                    question: "Q1".into(),
                    mode: StepMode::Full,
                },
                ChainStepSpec {
                    question: "Q2".into(),
                    mode: sweep(),
                },
                ChainStepSpec {
                    question: "Q3".into(),
                    mode: sweep(),
                },
            ],
            classifier,
            schedule_seed: 0,
            step: DEFAULT_FRACTION_STEP,
            select_k: default_k(),
            max_parallel: 1,
        }
    }

    pub fn validate(&self) -> Result<(), CurriculumError> {
        if self.steps.is_empty() {
            return Err(CurriculumError::InvalidSpec("no steps".into()));
        }
        for (i, s) in self.steps.iter().enumerate() {
            if self.steps[..i].iter().any(|p| p.question == s.question) {
                return Err(CurriculumError::InvalidSpec(format!(
                    "question {} repeated",
                    s.question
                )));
            }
        }
        if self.select_k == 0 || self.max_parallel == 0 {
            return Err(CurriculumError::InvalidSpec(
                "select_k and max_parallel must be >= 1".into(),
            ));
        }
        self.classifier.validate()?;
        Ok(())
    }

    fn sweep_options(&self, fractions: Option<Vec<f64>>) -> SweepOptions {
        SweepOptions {
            fractions,
            step: self.step,
            schedule_seed: self.schedule_seed,
            max_parallel: self.max_parallel,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChainStep {
    pub question: String,
    pub checkpoint: Checkpoint,
    pub fraction: f64,
    pub curve: Option<SweepCurve>,
    pub selection: Option<SelectionOutcome>,
    /// Training and test metrics of the step's checkpoint.
    pub report: TrainingReport,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct ChainResult {
    pub spec: CurriculumSpec,
    pub split_seed: u64,
    pub steps: Vec<ChainStep>,
}

/// Runs the chain's steps in order, each seeded by the previous step's
/// selected checkpoint.
pub fn run_chain(
    backend: &dyn Backend,
    spec: &CurriculumSpec,
    split: &SplitResult,
) -> Result<ChainResult, CurriculumError> {
    spec.validate()?;
    let mut base = Checkpoint::fresh(backend, spec.classifier.seed);
    let mut steps = Vec::new();
    for s in &spec.steps {
        let qs = question_split(split, &s.question)?;
        let step = match &s.mode {
            StepMode::Full => {
                let (checkpoint, report) = train(
                    backend,
                    Init::From(&base),
                    &qs.train,
                    &qs.validation,
                    &spec.classifier,
                    FineTuneStep::new(s.question.clone(), 1.0),
                )?;
                let metrics = evaluate(backend, &checkpoint, &qs.test)?;
                ChainStep {
                    question: s.question.clone(),
                    checkpoint,
                    fraction: 1.0,
                    curve: None,
                    selection: None,
                    report,
                    metrics,
                }
            }
            StepMode::Sweep {
                fractions,
                select_fraction,
            } => {
                let opts = spec.sweep_options(fractions.clone());
                let curve = run_fraction_sweep(
                    backend,
                    &base,
                    &s.question,
                    split,
                    &spec.classifier,
                    &opts,
                )?;
                let selection = select_model(&curve.accuracy_points(), spec.select_k)?;
                let fraction = select_fraction.unwrap_or(selection.chosen.fraction);
                let schedule = SubsetSchedule::build(&qs.train, spec.schedule_seed, spec.step)?;
                if schedule.point(fraction).is_none() {
                    return Err(CurriculumError::InvalidSpec(format!(
                        "fraction {fraction} is not on the grid"
                    )));
                }
                let (checkpoint, point) =
                    train_at(backend, &base, qs, &schedule, fraction, &spec.classifier)?;
                ChainStep {
                    question: s.question.clone(),
                    checkpoint,
                    fraction: point.fraction,
                    curve: Some(curve),
                    selection: Some(selection),
                    report: point.report,
                    metrics: point.metrics,
                }
            }
        };
        base = step.checkpoint.clone();
        steps.push(step);
    }
    Ok(ChainResult {
        spec: spec.clone(),
        split_seed: split.spec.seed,
        steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStepManifest {
    pub question: String,
    pub model_name: String,
    pub lineage: Lineage,
    pub fraction: f64,
    pub params_sha256: String,
    pub checkpoint_dir: Option<String>,
    pub metrics: MetricsReport,
    pub best_epoch: usize,
    pub selection: Option<SelectionOutcome>,
    pub curve: Option<SweepCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainManifest {
    pub spec: CurriculumSpec,
    pub split_seed: u64,
    pub steps: Vec<ChainStepManifest>,
}

fn params_hash(params: &[f64]) -> String {
    let bytes: Vec<u8> = params.iter().flat_map(|v| v.to_le_bytes()).collect();
    sha256_hex(&bytes)
}

impl ChainResult {
    pub fn manifest(&self) -> ChainManifest {
        ChainManifest {
            spec: self.spec.clone(),
            split_seed: self.split_seed,
            steps: self
                .steps
                .iter()
                .map(|s| ChainStepManifest {
                    question: s.question.clone(),
                    model_name: s.checkpoint.model_name(),
                    lineage: s.checkpoint.lineage.clone(),
                    fraction: s.fraction,
                    params_sha256: params_hash(&s.checkpoint.params),
                    checkpoint_dir: None,
                    metrics: s.metrics,
                    best_epoch: s.report.best_epoch,
                    selection: s.selection.clone(),
                    curve: s.curve.clone(),
                })
                .collect(),
        }
    }

    /// Saves every step's checkpoint under `dir/<model>` plus `chain.json`
    /// and `curves.csv`.
    pub fn write(&self, dir: &Path) -> Result<ChainManifest, CurriculumError> {
        fs::create_dir_all(dir)?;
        let mut manifest = self.manifest();
        for (s, m) in self.steps.iter().zip(manifest.steps.iter_mut()) {
            let sub = dir.join(&m.model_name);
            save_checkpoint(&s.checkpoint, &sub)?;
            m.checkpoint_dir = Some(m.model_name.clone());
        }
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(dir.join("chain.json"), json)?;
        let curves: Vec<&SweepCurve> = self.steps.iter().filter_map(|s| s.curve.as_ref()).collect();
        let file = fs::File::create(dir.join("curves.csv"))?;
        write_curves_csv(&curves, file).map_err(|e| std::io::Error::other(e.to_string()))?;
        Ok(manifest)
    }
}
