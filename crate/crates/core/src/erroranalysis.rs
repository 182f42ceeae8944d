//! Human-machine disagreement analysis: disagreement lists, two-model error
//! taxonomies and an offline expert re-review overlay.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Label, Provenance, ResponseRecord};

#[derive(Debug, Error)]
pub enum ErrorAnalysisError {
    #[error("{what} has {found} entries, expected {expected}")]
    LengthMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("review decision for unknown record {0:?}")]
    UnknownRecordId(String),
    #[error("record {0:?} has more than one review decision")]
    DuplicateDecision(String),
    #[error("review row {row}: {reason}")]
    MalformedReview { row: usize, reason: String },
    #[error("record {id:?}: review file says human label {file}, corpus says {corpus}")]
    LabelMismatch {
        id: String,
        file: Label,
        corpus: Label,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn check_len(what: &str, expected: usize, found: usize) -> Result<(), ErrorAnalysisError> {
    if expected != found {
        return Err(ErrorAnalysisError::LengthMismatch {
            what: what.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Predictions of one named model, aligned with a record list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPredictions {
    pub model: String,
    pub labels: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisagreementRecord {
    pub record_id: String,
    pub question: String,
    pub text: String,
    pub human: Label,
    /// One prediction per model, in input order.
    pub predictions: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disagreements {
    pub models: Vec<String>,
    pub records: Vec<DisagreementRecord>,
    /// Records each model got wrong, in model order.
    pub per_model: Vec<usize>,
}

/// Records where at least one model disagrees with the human label.
pub fn find_disagreements(
    records: &[ResponseRecord],
    models: &[ModelPredictions],
) -> Result<Disagreements, ErrorAnalysisError> {
    for m in models {
        check_len(
            &format!("predictions of {}", m.model),
            records.len(),
            m.labels.len(),
        )?;
    }
    let mut per_model = vec![0; models.len()];
    let mut out = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let predictions: Vec<Label> = models.iter().map(|m| m.labels[i]).collect();
        let mut any = false;
        for (j, &p) in predictions.iter().enumerate() {
            if p != r.label {
                per_model[j] += 1;
                any = true;
            }
        }
        if any {
            out.push(DisagreementRecord {
                record_id: r.record_id(),
                question: r.question.id.clone(),
                text: r.text.clone(),
                human: r.label,
                predictions,
            });
        }
    }
    Ok(Disagreements {
        models: models.iter().map(|m| m.model.clone()).collect(),
        records: out,
        per_model,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScenarioKey {
    pub human: Label,
    pub a: Label,
    pub b: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    /// Both models wrong.
    Shared,
    /// Exactly one model wrong.
    ModelSpecific,
}

impl TableKind {
    fn admits(self, k: &ScenarioKey) -> bool {
        let wa = k.a != k.human;
        let wb = k.b != k.human;
        match self {
            TableKind::Shared => wa && wb,
            TableKind::ModelSpecific => wa != wb,
        }
    }

    /// The 12 scenarios, grouped by human label and ordered by
    /// (prediction A, prediction B) in canonical label order.
    pub fn scenarios(self) -> Vec<ScenarioKey> {
        let mut out = Vec::with_capacity(12);
        for human in Label::ALL {
            for a in Label::ALL {
                for b in Label::ALL {
                    let k = ScenarioKey { human, a, b };
                    if self.admits(&k) {
                        out.push(k);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTable {
    pub kind: TableKind,
    pub rows: Vec<(ScenarioKey, u64)>,
}

impl ScenarioTable {
    pub fn get(&self, human: Label, a: Label, b: Label) -> u64 {
        self.rows
            .iter()
            .find(|(k, _)| *k == ScenarioKey { human, a, b })
            .map_or(0, |(_, c)| *c)
    }

    pub fn total(&self) -> u64 {
        self.rows.iter().map(|(_, c)| c).sum()
    }

    /// Columns: question, human_label, model_a, model_b, total.
    pub fn write_csv<W: Write>(&self, question: &str, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["question", "human_label", "model_a", "model_b", "total"])?;
        for (k, c) in &self.rows {
            w.write_record([
                question,
                k.human.title(),
                k.a.title(),
                k.b.title(),
                &c.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn scenario_table(
    kind: TableKind,
    truth: &[Label],
    a: &[Label],
    b: &[Label],
) -> Result<ScenarioTable, ErrorAnalysisError> {
    check_len("model A predictions", truth.len(), a.len())?;
    check_len("model B predictions", truth.len(), b.len())?;
    let mut counts: HashMap<ScenarioKey, u64> = HashMap::new();
    for i in 0..truth.len() {
        let k = ScenarioKey {
            human: truth[i],
            a: a[i],
            b: b[i],
        };
        if kind.admits(&k) {
            *counts.entry(k).or_default() += 1;
        }
    }
    let rows = kind
        .scenarios()
        .into_iter()
        .map(|k| (k, counts.get(&k).copied().unwrap_or(0)))
        .collect();
    Ok(ScenarioTable { kind, rows })
}

/// Records where both models are wrong, by scenario.
pub fn shared_error_table(
    truth: &[Label],
    a: &[Label],
    b: &[Label],
) -> Result<ScenarioTable, ErrorAnalysisError> {
    scenario_table(TableKind::Shared, truth, a, b)
}

/// Records where exactly one model is wrong, by scenario.
pub fn model_specific_table(
    truth: &[Label],
    a: &[Label],
    b: &[Label],
) -> Result<ScenarioTable, ErrorAnalysisError> {
    scenario_table(TableKind::ModelSpecific, truth, a, b)
}

/// Records both models got right.
pub fn both_right(truth: &[Label], a: &[Label], b: &[Label]) -> Result<u64, ErrorAnalysisError> {
    check_len("model A predictions", truth.len(), a.len())?;
    check_len("model B predictions", truth.len(), b.len())?;
    Ok((0..truth.len())
        .filter(|&i| a[i] == truth[i] && b[i] == truth[i])
        .count() as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Upheld,
    Miscode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub record_id: String,
    pub original: Label,
    pub expert: Label,
    pub verdict: Verdict,
}

impl ReviewDecision {
    pub fn new(record_id: impl Into<String>, original: Label, expert: Label) -> ReviewDecision {
        ReviewDecision {
            record_id: record_id.into(),
            original,
            expert,
            verdict: if original == expert {
                Verdict::Upheld
            } else {
                Verdict::Miscode
            },
        }
    }
}

const REVIEW_ID: &str = "id";
const REVIEW_HUMAN: &str = "human_label";
const REVIEW_EXPERT: &str = "expert_label";

/// Writes the review queue: id, question, text, human_label, one column per
/// model, and an empty expert_label column for the reviewer.
pub fn export_review_queue<W: Write>(d: &Disagreements, out: W) -> Result<(), ErrorAnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        REVIEW_ID.to_string(),
        "question".into(),
        "text".into(),
        REVIEW_HUMAN.into(),
    ];
    header.extend(d.models.iter().cloned());
    header.push(REVIEW_EXPERT.into());
    w.write_record(&header)?;
    for r in &d.records {
        let mut row = vec![
            r.record_id.clone(),
            r.question.clone(),
            r.text.clone(),
            r.human.title().to_string(),
        ];
        row.extend(r.predictions.iter().map(|l| l.title().to_string()));
        row.push(String::new());
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads a reviewed queue. A blank expert label upholds the human label.
pub fn parse_review_file<R: Read>(input: R) -> Result<Vec<ReviewDecision>, ErrorAnalysisError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ErrorAnalysisError::MalformedReview {
                row: 0,
                reason: format!("missing column {name}"),
            })
    };
    let (ci, ch, ce) = (col(REVIEW_ID)?, col(REVIEW_HUMAN)?, col(REVIEW_EXPERT)?);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let label = |c: usize| -> Result<Option<Label>, ErrorAnalysisError> {
            let s = rec.get(c).unwrap_or("").trim();
            if s.is_empty() {
                return Ok(None);
            }
            Label::parse(s)
                .map(Some)
                .ok_or_else(|| ErrorAnalysisError::MalformedReview {
                    row,
                    reason: format!("unknown label {s:?}"),
                })
        };
        let original = label(ch)?.ok_or_else(|| ErrorAnalysisError::MalformedReview {
            row,
            reason: "empty human label".into(),
        })?;
        let expert = label(ce)?.unwrap_or(original);
        out.push(ReviewDecision::new(
            rec.get(ci).unwrap_or("").trim(),
            original,
            expert,
        ));
    }
    Ok(out)
}

/// Expert label corrections layered over a corpus without modifying it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewOverlay {
    pub decisions: BTreeMap<String, ReviewDecision>,
}

impl ReviewOverlay {
    /// Records the decisions. Replaying decisions already applied leaves the
    /// overlay unchanged.
    pub fn apply(
        &mut self,
        corpus: &Corpus,
        decisions: &[ReviewDecision],
    ) -> Result<(), ErrorAnalysisError> {
        let labels: HashMap<String, Label> = corpus
            .records()
            .iter()
            .map(|r| (r.record_id(), r.label))
            .collect();
        let mut seen = BTreeSet::new();
        for d in decisions {
            let Some(&label) = labels.get(&d.record_id) else {
                return Err(ErrorAnalysisError::UnknownRecordId(d.record_id.clone()));
            };
            if label != d.original {
                return Err(ErrorAnalysisError::LabelMismatch {
                    id: d.record_id.clone(),
                    file: d.original,
                    corpus: label,
                });
            }
            if !seen.insert(d.record_id.as_str()) {
                return Err(ErrorAnalysisError::DuplicateDecision(d.record_id.clone()));
            }
        }
        for d in decisions {
            self.decisions.insert(d.record_id.clone(), d.clone());
        }
        Ok(())
    }

    pub fn miscodes(&self) -> usize {
        self.decisions
            .values()
            .filter(|d| d.verdict == Verdict::Miscode)
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }

    /// Reviewed label of a record, if the expert changed it.
    pub fn relabel(&self, record_id: &str) -> Option<Label> {
        self.decisions
            .get(record_id)
            .filter(|d| d.verdict == Verdict::Miscode)
            .map(|d| d.expert)
    }

    /// A copy of `corpus` with expert labels substituted.
    pub fn reviewed_corpus(&self, corpus: &Corpus) -> Corpus {
        let records = corpus
            .records()
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if let Some(l) = self.relabel(&r.record_id()) {
                    r.label = l;
                }
                r
            })
            .collect();
        Corpus::new(records, Provenance::Constructed).expect("relabelling keeps a valid corpus")
    }
}

/// Builds an overlay from one batch of decisions.
pub fn apply_review(
    corpus: &Corpus,
    decisions: &[ReviewDecision],
) -> Result<ReviewOverlay, ErrorAnalysisError> {
    let mut overlay = ReviewOverlay::default();
    overlay.apply(corpus, decisions)?;
    Ok(overlay)
}
