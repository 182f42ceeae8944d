//! Student-level splits and nested stratified training subsets.
//!
//! A student's responses always land in the same tier, so no model is ever
//! trained on one of a student's answers and tested on another.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Label, QuestionId, ResponseRecord};
use crate::text::id_list_hash;

/// Step of the default sweep grid (2.5%).
pub const DEFAULT_FRACTION_STEP: f64 = 0.025;

const FLOOR_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PartitionError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid split spec: {0}")]
    InvalidSpec(String),
    #[error("fraction {0} is outside [0, 1]")]
    FractionOutOfRange(f64),
    #[error("cannot draw a nonzero fraction from an empty base set")]
    EmptyBase,
    #[error("fraction step {0} must lie in (0, 1]")]
    InvalidStep(f64),
    #[error("split manifest does not match corpus: {0}")]
    ManifestMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_ratio: 0.5,
            val_ratio: 0.15,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), PartitionError> {
        if !(self.train_ratio > 0.0 && self.val_ratio > 0.0) {
            return Err(PartitionError::InvalidSpec(
                "ratios must be positive".into(),
            ));
        }
        if self.train_ratio + self.val_ratio >= 1.0 {
            return Err(PartitionError::InvalidSpec(
                "train_ratio + val_ratio must be below 1".into(),
            ));
        }
        Ok(())
    }

    /// Student counts `(train, validation, test)` for `n` students.
    pub fn tier_sizes(&self, n: usize) -> (usize, usize, usize) {
        let p = (self.train_ratio * n as f64 + FLOOR_EPS).floor() as usize;
        let q = (self.val_ratio * n as f64 + FLOOR_EPS).floor() as usize;
        (p, q, n - p - q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionSplit {
    pub question: QuestionId,
    pub train: Vec<ResponseRecord>,
    pub validation: Vec<ResponseRecord>,
    pub test: Vec<ResponseRecord>,
}

impl QuestionSplit {
    pub fn tier(&self, tier: Tier) -> &[ResponseRecord] {
        match tier {
            Tier::Train => &self.train,
            Tier::Validation => &self.validation,
            Tier::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub spec: SplitSpec,
    /// Shuffled student order; the first `p` are train, the next `q` validation.
    pub student_order: Vec<String>,
    pub train_students: usize,
    pub val_students: usize,
    pub questions: Vec<QuestionSplit>,
}

/// Replayable JSON form of a split: student ids per tier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub spec: SplitSpec,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl SplitResult {
    pub fn question(&self, id: &str) -> Option<&QuestionSplit> {
        self.questions.iter().find(|q| q.question.id == id)
    }

    pub fn tier_of(&self, student_id: &str) -> Option<Tier> {
        let pos = self.student_order.iter().position(|s| s == student_id)?;
        Some(self.tier_for_position(pos))
    }

    fn tier_for_position(&self, pos: usize) -> Tier {
        if pos < self.train_students {
            Tier::Train
        } else if pos < self.train_students + self.val_students {
            Tier::Validation
        } else {
            Tier::Test
        }
    }

    pub fn manifest(&self) -> SplitManifest {
        let p = self.train_students;
        let q = self.val_students;
        SplitManifest {
            spec: self.spec,
            train: self.student_order[..p].to_vec(),
            validation: self.student_order[p..p + q].to_vec(),
            test: self.student_order[p + q..].to_vec(),
        }
    }

    /// Rebuilds a split from its manifest. Every corpus student must be listed.
    pub fn from_manifest(
        corpus: &Corpus,
        manifest: &SplitManifest,
    ) -> Result<SplitResult, PartitionError> {
        let mut order = manifest.train.clone();
        order.extend(manifest.validation.iter().cloned());
        order.extend(manifest.test.iter().cloned());
        let listed: HashSet<&str> = order.iter().map(String::as_str).collect();
        if listed.len() != order.len() {
            return Err(PartitionError::ManifestMismatch(
                "student listed twice".into(),
            ));
        }
        if let Some(missing) = corpus
            .students()
            .iter()
            .find(|s| !listed.contains(s.as_str()))
        {
            return Err(PartitionError::ManifestMismatch(format!(
                "student {missing:?} not in manifest"
            )));
        }
        Ok(assemble(
            corpus,
            manifest.spec,
            order,
            manifest.train.len(),
            manifest.validation.len(),
        ))
    }
}

fn assemble(
    corpus: &Corpus,
    spec: SplitSpec,
    order: Vec<String>,
    p: usize,
    q: usize,
) -> SplitResult {
    let position: HashMap<&str, usize> = order
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut questions: Vec<QuestionSplit> = corpus
        .questions()
        .into_iter()
        .map(|question| QuestionSplit {
            question,
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
        })
        .collect();
    for qs in &mut questions {
        let mut recs: Vec<(usize, &ResponseRecord)> = corpus
            .records()
            .iter()
            .filter(|r| r.question.id == qs.question.id)
            .filter_map(|r| position.get(r.student_id.as_str()).map(|&i| (i, r)))
            .collect();
        recs.sort_by_key(|(i, _)| *i);
        for (i, r) in recs {
            let bucket = if i < p {
                &mut qs.train
            } else if i < p + q {
                &mut qs.validation
            } else {
                &mut qs.test
            };
            bucket.push(r.clone());
        }
    }
    SplitResult {
        spec,
        student_order: order,
        train_students: p,
        val_students: q,
        questions,
    }
}

/// Shuffles distinct students with the spec seed and cuts `floor(r·n)` tiers;
/// the remainder goes to test.
pub fn split_by_student(corpus: &Corpus, spec: &SplitSpec) -> Result<SplitResult, PartitionError> {
    spec.validate()?;
    if corpus.is_empty() {
        return Err(PartitionError::EmptyCorpus);
    }
    let mut students = corpus.students();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    students.shuffle(&mut rng);
    let (p, q, _) = spec.tier_sizes(students.len());
    Ok(assemble(corpus, *spec, students, p, q))
}

/// Training records kept when batching `n` records and dropping the ragged
/// tail. A lone partial batch (`0 < n < batch_size`) is kept.
pub fn effective_batched_count(n_records: usize, batch_size: usize) -> usize {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    if n_records < batch_size {
        n_records
    } else {
        n_records / batch_size * batch_size
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5 + FLOOR_EPS).floor() as usize
}

/// Per-label counts by largest remainder: floors of `f·n_l`, then the
/// largest fractional parts (ties by canonical label order) until the total
/// reaches `round(f·N)`.
pub fn largest_remainder_counts(label_counts: [usize; 3], fraction: f64) -> [usize; 3] {
    let total: usize = label_counts.iter().sum();
    let target = round_half_up(fraction * total as f64).min(total);
    let exact: Vec<f64> = label_counts.iter().map(|&n| fraction * n as f64).collect();
    let mut counts = [0usize; 3];
    for i in 0..3 {
        counts[i] = ((exact[i] + FLOOR_EPS).floor() as usize).min(label_counts[i]);
    }
    // Remainders are compared at 1e-9 resolution so float noise in `f·n_l`
    // cannot break a tie.
    let rem: Vec<i64> = (0..3)
        .map(|i| ((exact[i] - counts[i] as f64) * 1e9).round() as i64)
        .collect();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| rem[b].cmp(&rem[a]).then(a.cmp(&b)));
    let mut missing = target.saturating_sub(counts.iter().sum());
    for &i in order.iter().cycle().take(3 * 3) {
        if missing == 0 {
            break;
        }
        if counts[i] < label_counts[i] {
            counts[i] += 1;
            missing -= 1;
        }
    }
    counts
}

/// Counts for one step of a nested schedule. Uses the largest-remainder
/// counts when they do not shrink any label relative to `prev`; otherwise
/// picks the total-preserving allocation `>= prev` closest to them, within
/// the tightest achievable deviation bound around `f·n_l`.
fn nested_step(label_counts: [usize; 3], fraction: f64, prev: [usize; 3]) -> [usize; 3] {
    let lr = largest_remainder_counts(label_counts, fraction);
    if (0..3).all(|i| lr[i] >= prev[i]) {
        return lr;
    }
    let target: usize = lr.iter().sum();
    let exact: Vec<f64> = label_counts.iter().map(|&n| fraction * n as f64).collect();
    for bound in 1.. {
        let b = bound as f64;
        let lo: Vec<usize> = (0..3)
            .map(|i| prev[i].max((exact[i] - b - FLOOR_EPS).ceil().max(0.0) as usize))
            .collect();
        let hi: Vec<usize> = (0..3)
            .map(|i| label_counts[i].min((exact[i] + b + FLOOR_EPS).floor() as usize))
            .collect();
        let mut best: Option<([usize; 3], usize)> = None;
        for a in lo[0]..=hi[0].max(lo[0]) {
            for c in lo[1]..=hi[1].max(lo[1]) {
                let used = a + c;
                if used > target || target - used < lo[2] || target - used > hi[2] {
                    continue;
                }
                let cand = [a, c, target - used];
                if (0..3).any(|i| cand[i] > hi[i] || cand[i] < lo[i]) {
                    continue;
                }
                let dist = (0..3).map(|i| cand[i].abs_diff(lr[i])).sum();
                if best.is_none_or(|(bc, bd)| dist < bd || (dist == bd && cand < bc)) {
                    best = Some((cand, dist));
                }
            }
        }
        if let Some((cand, _)) = best {
            return cand;
        }
    }
    unreachable!("a bound of max(label_counts) always admits an allocation")
}

/// Nested per-label counts along strictly increasing fractions.
pub fn nested_counts(label_counts: [usize; 3], fractions: &[f64]) -> Vec<[usize; 3]> {
    let mut prev = [0usize; 3];
    fractions
        .iter()
        .map(|&f| {
            let c = nested_step(label_counts, f, prev);
            prev = c;
            c
        })
        .collect()
}

/// Fractions `0, step, 2·step, …, 1`.
pub fn fraction_grid(step: f64) -> Result<Vec<f64>, PartitionError> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(PartitionError::InvalidStep(step));
    }
    let n = (1.0 / step + FLOOR_EPS).floor() as usize;
    let mut out: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
    if ((n as f64) * step - 1.0).abs() > 1e-9 {
        // Non-dividing step: keep the exact multiples and close with 1.
        out = (0..=n).map(|k| k as f64 * step).collect();
        if *out.last().unwrap() < 1.0 - 1e-12 {
            out.push(1.0);
        }
    }
    Ok(out)
}

fn label_permutations(base: &[ResponseRecord], seed: u64) -> [Vec<usize>; 3] {
    let mut per_label: [Vec<usize>; 3] = Default::default();
    for (i, r) in base.iter().enumerate() {
        per_label[r.label.index()].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for list in &mut per_label {
        list.shuffle(&mut rng);
    }
    per_label
}

fn label_counts(base: &[ResponseRecord]) -> [usize; 3] {
    let mut c = [0usize; 3];
    for r in base {
        c[r.label.index()] += 1;
    }
    c
}

fn members_for(perms: &[Vec<usize>; 3], counts: [usize; 3]) -> Vec<usize> {
    let mut idx: Vec<usize> = Label::ALL
        .iter()
        .flat_map(|l| perms[l.index()][..counts[l.index()]].iter().copied())
        .collect();
    idx.sort_unstable();
    idx
}

/// Seeded stratified subset of `base`, in base order.
///
/// Counts are computed along the default 2.5% grid up to `fraction`, so the
/// result is nested with every grid fraction below it.
pub fn stratified_subset(
    base: &[ResponseRecord],
    fraction: f64,
    seed: u64,
) -> Result<Vec<ResponseRecord>, PartitionError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(PartitionError::FractionOutOfRange(fraction));
    }
    if fraction == 0.0 {
        return Ok(Vec::new());
    }
    if base.is_empty() {
        return Err(PartitionError::EmptyBase);
    }
    let mut path: Vec<f64> = fraction_grid(DEFAULT_FRACTION_STEP)?
        .into_iter()
        .filter(|&f| f < fraction - 1e-12)
        .collect();
    path.push(fraction);
    let counts = *nested_counts(label_counts(base), &path).last().unwrap();
    let perms = label_permutations(base, seed);
    Ok(members_for(&perms, counts)
        .into_iter()
        .map(|i| base[i].clone())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulePoint {
    pub fraction: f64,
    /// Per-label counts in canonical order.
    pub counts: [usize; 3],
    /// Indices into the base set, ascending.
    pub members: Vec<usize>,
    pub record_ids: Vec<String>,
    pub hash: String,
}

/// Nested stratified subsets of one base set over a fraction grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSchedule {
    pub seed: u64,
    pub step: f64,
    pub base_hash: String,
    pub points: Vec<SchedulePoint>,
}

impl SubsetSchedule {
    pub fn build(
        base: &[ResponseRecord],
        seed: u64,
        step: f64,
    ) -> Result<SubsetSchedule, PartitionError> {
        let fractions = fraction_grid(step)?;
        if base.is_empty() {
            return Err(PartitionError::EmptyBase);
        }
        let counts = nested_counts(label_counts(base), &fractions);
        let perms = label_permutations(base, seed);
        let ids: Vec<String> = base.iter().map(ResponseRecord::record_id).collect();
        let points = fractions
            .into_iter()
            .zip(counts)
            .map(|(fraction, counts)| {
                let members = members_for(&perms, counts);
                let record_ids: Vec<String> = members.iter().map(|&i| ids[i].clone()).collect();
                SchedulePoint {
                    fraction,
                    counts,
                    hash: id_list_hash(&record_ids),
                    members,
                    record_ids,
                }
            })
            .collect();
        Ok(SubsetSchedule {
            seed,
            step,
            base_hash: id_list_hash(&ids),
            points,
        })
    }

    pub fn fractions(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.fraction).collect()
    }

    /// The schedule point at `fraction` (matched within 1e-9).
    pub fn point(&self, fraction: f64) -> Option<&SchedulePoint> {
        self.points
            .iter()
            .find(|p| (p.fraction - fraction).abs() < 1e-9)
    }

    pub fn subset(&self, base: &[ResponseRecord], fraction: f64) -> Option<Vec<ResponseRecord>> {
        self.point(fraction)
            .map(|p| p.members.iter().map(|&i| base[i].clone()).collect())
    }
}
