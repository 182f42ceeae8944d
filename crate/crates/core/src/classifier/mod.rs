//! Backend-agnostic trainable text classifier.
//!
//! Every backend exposes a flat parameter vector, class probabilities and a
//! mini-batch loss gradient; the shared loop in [`train`] owns batching,
//! the Adam optimizer and patience-based early stopping on validation
//! accuracy with best-epoch restore.

mod adam;
mod checkpoint;
mod early_stop;
pub mod reference;
pub mod toy;

use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Label, ResponseRecord};
use crate::metrics::{confusion, macro_metrics, MetricsReport};
use crate::partitioning::effective_batched_count;

pub use adam::Adam;
pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointManifest, MANIFEST_FILE, PARAMS_FILE,
};
pub use early_stop::{EarlyStopping, Observation};
pub use reference::{ReferenceBackend, ReferenceOptions, REFERENCE_BACKEND_ID};
pub use toy::{ToyBackend, ToyOptions, TOY_BACKEND_ID};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("checkpoint backend {found:?} does not match backend {expected:?}")]
    BackendMismatch { expected: String, found: String },
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("invalid classifier config: {0}")]
    InvalidConfig(String),
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("model {model} was last trained on {expected:?}, refusing to evaluate on {found:?}")]
    QuestionMismatch {
        model: String,
        expected: Option<String>,
        found: String,
    },
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Backend selection plus its options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Toy(ToyOptions),
    Reference(ReferenceOptions),
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Toy(ToyOptions::default())
    }
}

impl BackendSpec {
    pub fn id(&self) -> &'static str {
        match self {
            BackendSpec::Toy(_) => TOY_BACKEND_ID,
            BackendSpec::Reference(_) => REFERENCE_BACKEND_ID,
        }
    }

    pub fn build(&self) -> Box<dyn Backend> {
        match *self {
            BackendSpec::Toy(o) => Box::new(ToyBackend::new(o)),
            BackendSpec::Reference(o) => Box::new(ReferenceBackend::new(o)),
        }
    }
}

/// Rebuilds a registered backend from the id and options stored in a checkpoint.
pub fn resolve_backend(
    id: &str,
    options: &serde_json::Value,
) -> Result<Box<dyn Backend>, ClassifierError> {
    let bad =
        |e: serde_json::Error| ClassifierError::CorruptCheckpoint(format!("backend options: {e}"));
    match id {
        TOY_BACKEND_ID => Ok(Box::new(ToyBackend::new(
            serde_json::from_value(options.clone()).map_err(bad)?,
        ))),
        REFERENCE_BACKEND_ID => Ok(Box::new(ReferenceBackend::new(
            serde_json::from_value(options.clone()).map_err(bad)?,
        ))),
        other => Err(ClassifierError::UnknownBackend(other.to_string())),
    }
}

pub fn is_registered_backend(id: &str) -> bool {
    matches!(id, TOY_BACKEND_ID | REFERENCE_BACKEND_ID)
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    /// Options needed to rebuild this backend from a checkpoint.
    fn options(&self) -> serde_json::Value;
    fn init_params(&self, seed: u64) -> Vec<f64>;
    /// Class probabilities in canonical label order.
    fn predict_proba(&self, params: &[f64], text: &str) -> [f64; 3];
    /// Mean categorical cross-entropy over `batch` and its gradient.
    fn loss_and_grad(&self, params: &[f64], batch: &[&ResponseRecord]) -> (f64, Vec<f64>);
}

pub(crate) fn softmax(z: [f64; 3]) -> [f64; 3] {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = z.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

fn default_learning_rate() -> f64 {
    1e-5
}
fn default_batch_size() -> usize {
    16
}
fn default_patience() -> usize {
    10
}
fn default_max_epochs() -> usize {
    200
}

/// Training hyperparameters. The loss is categorical cross-entropy and the
/// early-stopping monitor is validation accuracy; neither is configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    #[serde(default)]
    pub backend: BackendSpec,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_patience")]
    pub patience_epochs: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            backend: BackendSpec::default(),
            learning_rate: default_learning_rate(),
            batch_size: default_batch_size(),
            patience_epochs: default_patience(),
            max_epochs: default_max_epochs(),
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.patience_epochs == 0 {
            return bad("patience_epochs must be >= 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1");
        }
        Ok(())
    }
}

/// One fine-tuning step: the question trained on and the data fraction used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneStep {
    pub question: String,
    pub fraction: f64,
}

impl FineTuneStep {
    pub fn new(question: impl Into<String>, fraction: f64) -> FineTuneStep {
        FineTuneStep {
            question: question.into(),
            fraction,
        }
    }
}

/// Fine-tuning history rooted at the untrained base model `B0`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub steps: Vec<FineTuneStep>,
}

impl Lineage {
    pub fn last_question(&self) -> Option<&str> {
        self.steps.last().map(|s| s.question.as_str())
    }

    pub fn contains_question(&self, question: &str) -> bool {
        self.steps.iter().any(|s| s.question == question)
    }

    pub fn extended(&self, step: FineTuneStep) -> Lineage {
        let mut steps = self.steps.clone();
        steps.push(step);
        Lineage { steps }
    }

    /// `B0` for the base model, otherwise `BM` followed by the question ids,
    /// e.g. `BMQ1Q2`.
    pub fn model_name(&self) -> String {
        if self.steps.is_empty() {
            return "B0".to_string();
        }
        let mut name = String::from("BM");
        for s in &self.steps {
            name.push_str(&s.question);
        }
        name
    }
}

impl fmt::Display for Lineage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("B0")?;
        for s in &self.steps {
            write!(f, " -> {}@{}%", s.question, 100.0 * s.fraction)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub backend_id: String,
    pub backend_options: serde_json::Value,
    pub params: Vec<f64>,
    pub labels: [Label; 3],
    /// Config of the most recent training run; `None` for a fresh model.
    pub config: Option<ClassifierConfig>,
    pub lineage: Lineage,
}

impl Checkpoint {
    /// Untrained base model.
    pub fn fresh(backend: &dyn Backend, seed: u64) -> Checkpoint {
        Checkpoint {
            backend_id: backend.id().to_string(),
            backend_options: backend.options(),
            params: backend.init_params(seed),
            labels: Label::ALL,
            config: None,
            lineage: Lineage::default(),
        }
    }

    pub fn model_name(&self) -> String {
        self.lineage.model_name()
    }

    fn check_backend(&self, backend: &dyn Backend) -> Result<(), ClassifierError> {
        if self.backend_id != backend.id() {
            return Err(ClassifierError::BackendMismatch {
                expected: backend.id().to_string(),
                found: self.backend_id.clone(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    PatienceExhausted,
    MaxEpochs,
    EmptyTrain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

/// Equality ignores `wall_time_secs` so reruns compare equal. Wall time is
/// not serialized, which keeps written reports byte-identical across reruns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingReport {
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were restored; 0 when nothing was trained.
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
    pub stop_reason: StopReason,
    pub train_records: usize,
    pub effective_train_records: usize,
    #[serde(skip_serializing, default)]
    pub wall_time_secs: f64,
}

impl PartialEq for TrainingReport {
    fn eq(&self, other: &Self) -> bool {
        self.history == other.history
            && self.best_epoch == other.best_epoch
            && self.best_val_accuracy == other.best_val_accuracy
            && self.stop_reason == other.stop_reason
            && self.train_records == other.train_records
            && self.effective_train_records == other.effective_train_records
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    pub scores: [f64; 3],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub items: Vec<Prediction>,
}

impl PredictionSet {
    pub fn labels(&self) -> Vec<Label> {
        self.items.iter().map(|p| p.label).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// First maximal index wins, so ties follow canonical label order.
pub fn argmax_label(scores: &[f64; 3]) -> Label {
    let mut best = 0;
    for i in 1..3 {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    Label::ALL[best]
}

pub fn predict(
    backend: &dyn Backend,
    ckpt: &Checkpoint,
    records: &[ResponseRecord],
) -> Result<PredictionSet, ClassifierError> {
    ckpt.check_backend(backend)?;
    let items = records
        .iter()
        .map(|r| {
            let scores = backend.predict_proba(&ckpt.params, &r.text);
            Prediction {
                label: argmax_label(&scores),
                scores,
            }
        })
        .collect();
    Ok(PredictionSet { items })
}

/// Predicts `records` and scores them against their human labels.
///
/// Every record must belong to the question the checkpoint was last
/// fine-tuned on.
pub fn evaluate(
    backend: &dyn Backend,
    ckpt: &Checkpoint,
    records: &[ResponseRecord],
) -> Result<MetricsReport, ClassifierError> {
    let expected = ckpt.lineage.last_question();
    if let Some(r) = records
        .iter()
        .find(|r| Some(r.question.id.as_str()) != expected)
    {
        return Err(ClassifierError::QuestionMismatch {
            model: ckpt.model_name(),
            expected: expected.map(str::to_string),
            found: r.question.id.clone(),
        });
    }
    if records.is_empty() {
        return Err(ClassifierError::EmptyEvaluation);
    }
    let preds = predict(backend, ckpt, records)?;
    let truth: Vec<Label> = records.iter().map(|r| r.label).collect();
    let cm = confusion(&truth, &preds.labels()).map_err(|_| ClassifierError::EmptyEvaluation)?;
    macro_metrics(&cm).map_err(|_| ClassifierError::EmptyEvaluation)
}

fn accuracy_of(backend: &dyn Backend, params: &[f64], records: &[&ResponseRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let hits = records
        .iter()
        .filter(|r| argmax_label(&backend.predict_proba(params, &r.text)) == r.label)
        .count();
    hits as f64 / records.len() as f64
}

/// Where training starts.
#[derive(Debug, Clone, Copy)]
pub enum Init<'a> {
    /// A fresh base model initialized from `config.seed`.
    Fresh,
    From(&'a Checkpoint),
}

/// Fine-tunes all parameters on `train_set`, monitoring accuracy on
/// `val_set`.
///
/// Each epoch shuffles the training records, keeps
/// `effective_batched_count` of them and takes one Adam step per batch.
/// Training stops once validation accuracy has not strictly improved for
/// `patience_epochs` epochs, or at `max_epochs`; the best epoch's parameters
/// are returned. An empty `train_set` returns the initial parameters
/// unchanged with the step appended to the lineage.
pub fn train(
    backend: &dyn Backend,
    init: Init<'_>,
    train_set: &[ResponseRecord],
    val_set: &[ResponseRecord],
    config: &ClassifierConfig,
    step: FineTuneStep,
) -> Result<(Checkpoint, TrainingReport), ClassifierError> {
    config.validate()?;
    if val_set.is_empty() {
        return Err(ClassifierError::EmptyValidation);
    }
    let start = Instant::now();
    let base = match init {
        Init::Fresh => Checkpoint::fresh(backend, config.seed),
        Init::From(ckpt) => {
            ckpt.check_backend(backend)?;
            ckpt.clone()
        }
    };
    let lineage = base.lineage.extended(step);

    if train_set.is_empty() {
        let report = TrainingReport {
            history: Vec::new(),
            best_epoch: 0,
            best_val_accuracy: None,
            stop_reason: StopReason::EmptyTrain,
            train_records: 0,
            effective_train_records: 0,
            wall_time_secs: start.elapsed().as_secs_f64(),
        };
        return Ok((Checkpoint { lineage, ..base }, report));
    }

    let effective = effective_batched_count(train_set.len(), config.batch_size);
    let val_refs: Vec<&ResponseRecord> = val_set.iter().collect();
    let mut order: Vec<&ResponseRecord> = train_set.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_7a1e);
    let mut params = base.params.clone();
    let mut optimizer = Adam::new(params.len());
    let mut stopper = EarlyStopping::new(config.patience_epochs);
    let mut best_params = params.clone();
    let mut history = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let used = &order[..effective];
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for batch in used.chunks(config.batch_size) {
            let (loss, grad) = backend.loss_and_grad(&params, batch);
            optimizer.step(&mut params, &grad, config.learning_rate);
            loss_sum += loss;
            n_batches += 1;
        }
        let val_accuracy = accuracy_of(backend, &params, &val_refs);
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n_batches as f64,
            train_accuracy: accuracy_of(backend, &params, used),
            val_accuracy,
        });
        match stopper.observe(epoch, val_accuracy) {
            Observation::Improved => best_params.clone_from(&params),
            Observation::NoImprovement => {}
            Observation::Stop => {
                stop_reason = StopReason::PatienceExhausted;
                break;
            }
        }
    }

    let (best_epoch, best_val) = stopper.best().expect("at least one epoch ran");
    let ckpt = Checkpoint {
        params: best_params,
        config: Some(config.clone()),
        lineage,
        ..base
    };
    let report = TrainingReport {
        history,
        best_epoch,
        best_val_accuracy: Some(best_val),
        stop_reason,
        train_records: train_set.len(),
        effective_train_records: effective,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((ckpt, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::QuestionId;

    fn rec(i: usize, label: Label, text: &str) -> ResponseRecord {
        ResponseRecord::new(format!("s{i}"), QuestionId::q1(), text, label)
    }

    fn separable(n: usize) -> Vec<ResponseRecord> {
        (0..n)
            .map(|i| {
                let l = Label::ALL[i % 3];
                let text = match l {
                    Label::Correct => format!("alpha beta filler{}", i % 5),
                    Label::Incomplete => format!("gamma delta filler{}", i % 5),
                    Label::Incorrect => format!("epsilon zeta filler{}", i % 5),
                };
                rec(i, l, &text)
            })
            .collect()
    }

    fn toy_config() -> ClassifierConfig {
        ClassifierConfig {
            learning_rate: 0.05,
            ..Default::default()
        }
    }

    #[test]
    fn empty_train_is_identity() {
        let backend = ToyBackend::new(ToyOptions::default());
        let base = Checkpoint::fresh(&backend, 3);
        let val = separable(6);
        let (ckpt, report) = train(
            &backend,
            Init::From(&base),
            &[],
            &val,
            &toy_config(),
            FineTuneStep::new("Q2", 0.0),
        )
        .unwrap();
        assert_eq!(ckpt.params, base.params);
        assert_eq!(report.stop_reason, StopReason::EmptyTrain);
        assert_eq!(ckpt.lineage.model_name(), "BMQ2");
    }

    #[test]
    fn separable_set_is_learned() {
        let backend = ToyBackend::new(ToyOptions::default());
        let data = separable(60);
        let config = ClassifierConfig {
            max_epochs: 50,
            patience_epochs: 50,
            ..toy_config()
        };
        let (ckpt, _) = train(
            &backend,
            Init::Fresh,
            &data,
            &data,
            &config,
            FineTuneStep::new("Q1", 1.0),
        )
        .unwrap();
        let preds = predict(&backend, &ckpt, &data).unwrap();
        let acc = preds
            .labels()
            .iter()
            .zip(&data)
            .filter(|(p, r)| **p == r.label)
            .count();
        assert_eq!(acc, 60);
    }

    #[test]
    fn config_and_input_errors() {
        let backend = ToyBackend::new(ToyOptions::default());
        let data = separable(6);
        assert!(matches!(
            train(
                &backend,
                Init::Fresh,
                &data,
                &[],
                &toy_config(),
                FineTuneStep::new("Q1", 1.0)
            ),
            Err(ClassifierError::EmptyValidation)
        ));
        let bad = ClassifierConfig {
            patience_epochs: 0,
            ..toy_config()
        };
        assert!(matches!(
            train(
                &backend,
                Init::Fresh,
                &data,
                &data,
                &bad,
                FineTuneStep::new("Q1", 1.0)
            ),
            Err(ClassifierError::InvalidConfig(_))
        ));
        let reference = ReferenceBackend::new(ReferenceOptions {
            encoder_width: 8,
            intermediate_units: 4,
        });
        let foreign = Checkpoint::fresh(&reference, 0);
        assert!(matches!(
            train(
                &backend,
                Init::From(&foreign),
                &data,
                &data,
                &toy_config(),
                FineTuneStep::new("Q1", 1.0)
            ),
            Err(ClassifierError::BackendMismatch { .. })
        ));
        assert!(matches!(
            predict(&backend, &foreign, &data),
            Err(ClassifierError::BackendMismatch { .. })
        ));
    }

    #[test]
    fn evaluation_is_guarded_by_lineage() {
        let backend = ToyBackend::new(ToyOptions::default());
        let data = separable(9);
        let fresh = Checkpoint::fresh(&backend, 0);
        assert!(matches!(
            evaluate(&backend, &fresh, &data),
            Err(ClassifierError::QuestionMismatch { expected: None, .. })
        ));
        let (q1, _) = train(
            &backend,
            Init::From(&fresh),
            &[],
            &data,
            &toy_config(),
            FineTuneStep::new("Q1", 0.0),
        )
        .unwrap();
        assert_eq!(evaluate(&backend, &q1, &data).unwrap().support, 9);
        let (q2, _) = train(
            &backend,
            Init::From(&q1),
            &[],
            &data,
            &toy_config(),
            FineTuneStep::new("Q2", 0.0),
        )
        .unwrap();
        assert!(matches!(
            evaluate(&backend, &q2, &data),
            Err(ClassifierError::QuestionMismatch { .. })
        ));
    }

    #[test]
    fn lineage_names() {
        let l = Lineage::default()
            .extended(FineTuneStep::new("Q1", 1.0))
            .extended(FineTuneStep::new("Q2", 0.625));
        assert_eq!(l.model_name(), "BMQ1Q2");
        assert_eq!(l.to_string(), "B0 -> Q1@100% -> Q2@62.5%");
        assert_eq!(Lineage::default().model_name(), "B0");
    }

    #[test]
    fn argmax_ties_use_canonical_order() {
        assert_eq!(argmax_label(&[0.4, 0.4, 0.2]), Label::Correct);
        assert_eq!(argmax_label(&[0.2, 0.4, 0.4]), Label::Incomplete);
    }

    #[test]
    fn config_toml_defaults() {
        let c: ClassifierConfig = toml::from_str("seed = 4").unwrap();
        assert_eq!(c.learning_rate, 1e-5);
        assert_eq!(
            (c.batch_size, c.patience_epochs, c.max_epochs),
            (16, 10, 200)
        );
        let r: ClassifierConfig = toml::from_str(
            "[backend]\nkind = \"reference\"\nencoder_width = 768\nintermediate_units = 512\n",
        )
        .unwrap();
        assert_eq!(r.backend.id(), REFERENCE_BACKEND_ID);
    }
}
