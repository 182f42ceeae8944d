//! Labelled short-answer responses: data model, JSONL I/O and statistics.

mod synth;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use synth::{generate_synthetic_corpus, QuestionCounts, SynthSpec};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("duplicate record for student {student_id:?} on question {question:?}")]
    DuplicateKey {
        student_id: String,
        question: String,
    },
    #[error("line {line}: response text is empty")]
    EmptyText { line: usize },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

/// Three-way grade. The declaration order is the canonical matrix order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Correct,
    Incomplete,
    Incorrect,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Correct, Label::Incomplete, Label::Incorrect];

    pub fn index(self) -> usize {
        match self {
            Label::Correct => 0,
            Label::Incomplete => 1,
            Label::Incorrect => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Correct => "correct",
            Label::Incomplete => "incomplete",
            Label::Incorrect => "incorrect",
        }
    }

    /// Title-cased name, as used in reports.
    pub fn title(self) -> &'static str {
        match self {
            Label::Correct => "Correct",
            Label::Incomplete => "Incomplete",
            Label::Incorrect => "Incorrect",
        }
    }

    /// Case-insensitive parse. Surrounding whitespace is ignored.
    pub fn parse(s: &str) -> Option<Label> {
        let s = s.trim();
        Label::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}

/// A question identifier plus the kind of question it asks.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QuestionId {
    pub id: String,
    pub question_type: String,
}

impl QuestionId {
    pub fn new(id: impl Into<String>, question_type: impl Into<String>) -> Option<QuestionId> {
        let id = id.into();
        let question_type = question_type.into();
        if id.trim().is_empty() || question_type.trim().is_empty() {
            return None;
        }
        Some(QuestionId { id, question_type })
    }

    pub fn q1() -> QuestionId {
        QuestionId::new("Q1", "replication").unwrap()
    }

    pub fn q2() -> QuestionId {
        QuestionId::new("Q2", "transcription").unwrap()
    }

    pub fn q3() -> QuestionId {
        QuestionId::new("Q3", "translation").unwrap()
    }
}

impl fmt::Display for QuestionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseRecord {
    pub student_id: String,
    pub question: QuestionId,
    pub text: String,
    pub label: Label,
}

impl ResponseRecord {
    pub fn new(
        student_id: impl Into<String>,
        question: QuestionId,
        text: impl Into<String>,
        label: Label,
    ) -> ResponseRecord {
        ResponseRecord {
            student_id: student_id.into(),
            question,
            text: text.into(),
            label,
        }
    }

    /// Stable identifier: `student_id|question_id`.
    pub fn record_id(&self) -> String {
        format!("{}|{}", self.student_id, self.question.id)
    }
}

/// On-disk shape of one JSONL line.
#[derive(Debug, Serialize, Deserialize)]
struct WireRecord {
    student_id: String,
    question: String,
    question_type: String,
    text: String,
    label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    File { path: PathBuf },
    Synthetic { spec: SynthSpec },
    Constructed,
}

/// An immutable, validated collection of responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    records: Vec<ResponseRecord>,
    provenance: Provenance,
}

impl Corpus {
    /// Validates uniqueness of `(student_id, question)` and non-empty text.
    pub fn new(
        records: Vec<ResponseRecord>,
        provenance: Provenance,
    ) -> Result<Corpus, CorpusError> {
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.text.trim().is_empty() {
                return Err(CorpusError::EmptyText { line: i + 1 });
            }
            if !seen.insert((r.student_id.as_str(), r.question.id.as_str())) {
                return Err(CorpusError::DuplicateKey {
                    student_id: r.student_id.clone(),
                    question: r.question.id.clone(),
                });
            }
        }
        Ok(Corpus {
            records,
            provenance,
        })
    }

    pub fn empty() -> Corpus {
        Corpus {
            records: Vec::new(),
            provenance: Provenance::Constructed,
        }
    }

    pub fn records(&self) -> &[ResponseRecord] {
        &self.records
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Questions in order of first appearance.
    pub fn questions(&self) -> Vec<QuestionId> {
        let mut out: Vec<QuestionId> = Vec::new();
        for r in &self.records {
            if !out.iter().any(|q| q.id == r.question.id) {
                out.push(r.question.clone());
            }
        }
        out
    }

    pub fn question(&self, id: &str) -> Option<QuestionId> {
        self.records
            .iter()
            .find(|r| r.question.id == id)
            .map(|r| r.question.clone())
    }

    /// Distinct student ids, sorted.
    pub fn students(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.records.iter().map(|r| r.student_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// True when every question has at least one record of every label.
    pub fn is_complete(&self) -> bool {
        let stats = corpus_stats(self);
        stats
            .questions
            .iter()
            .all(|q| q.counts.iter().all(|&c| c > 0))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let wire = WireRecord {
                student_id: r.student_id.clone(),
                question: r.question.id.clone(),
                question_type: r.question.question_type.clone(),
                text: r.text.clone(),
                label: r.label.as_str().to_string(),
            };
            out.push_str(&serde_json::to_string(&wire).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let io = |source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(io)?;
        Ok(())
    }

    /// Parses JSONL text. Blank lines are skipped.
    pub fn parse_jsonl(text: &str, provenance: Provenance) -> Result<Corpus, CorpusError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(parse_line(i + 1, line)?);
        }
        validate_with_lines(records, provenance)
    }
}

fn parse_line(line_no: usize, line: &str) -> Result<(usize, ResponseRecord), CorpusError> {
    let wire: WireRecord =
        serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
    let label = Label::parse(&wire.label).ok_or_else(|| CorpusError::UnknownLabel {
        line: line_no,
        label: wire.label.clone(),
    })?;
    let question = QuestionId::new(wire.question, wire.question_type).ok_or_else(|| {
        CorpusError::MalformedRecord {
            line: line_no,
            reason: "question and question_type must be nonempty".into(),
        }
    })?;
    if wire.text.trim().is_empty() {
        return Err(CorpusError::EmptyText { line: line_no });
    }
    Ok((
        line_no,
        ResponseRecord::new(wire.student_id, question, wire.text, label),
    ))
}

fn validate_with_lines(
    numbered: Vec<(usize, ResponseRecord)>,
    provenance: Provenance,
) -> Result<Corpus, CorpusError> {
    let mut seen = HashSet::with_capacity(numbered.len());
    for (_, r) in &numbered {
        if !seen.insert((r.student_id.clone(), r.question.id.clone())) {
            return Err(CorpusError::DuplicateKey {
                student_id: r.student_id.clone(),
                question: r.question.id.clone(),
            });
        }
    }
    Ok(Corpus {
        records: numbered.into_iter().map(|(_, r)| r).collect(),
        provenance,
    })
}

/// Reads and validates a JSONL corpus file.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let f = fs::File::open(path).map_err(io)?;
    let mut numbered = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        numbered.push(parse_line(i + 1, &line)?);
    }
    validate_with_lines(
        numbered,
        Provenance::File {
            path: path.to_path_buf(),
        },
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionStats {
    pub question: QuestionId,
    /// Indexed by `Label::index`.
    pub counts: [usize; 3],
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub questions: Vec<QuestionStats>,
    pub total: usize,
}

impl CorpusStats {
    pub fn question(&self, id: &str) -> Option<&QuestionStats> {
        self.questions.iter().find(|q| q.question.id == id)
    }
}

/// Per-(question, label) counts in question first-appearance order.
pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let order = corpus.questions();
    let mut counts: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
    for r in corpus.records() {
        counts.entry(r.question.id.as_str()).or_default()[r.label.index()] += 1;
    }
    let questions = order
        .into_iter()
        .map(|q| {
            let c = counts[q.id.as_str()];
            QuestionStats {
                total: c.iter().sum(),
                counts: c,
                question: q,
            }
        })
        .collect();
    CorpusStats {
        questions,
        total: corpus.len(),
    }
}
