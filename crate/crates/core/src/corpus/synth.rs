//! Seeded synthetic corpora with exact label counts and Zipfian token text.
//!
//! Tokens are rendered as `w<rank>` where rank 1 is the most probable word of
//! the background Zipf law `p(r) ∝ r^-β`. The vocabulary is partitioned into
//! label sublexicons: three shared across questions and three per question.
//! Each sublexicon's total background mass is set to its expected share of
//! planted tokens, so the corpus-level rank-frequency curve keeps the
//! background exponent while individual responses carry label signal.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Label, Provenance, QuestionId, ResponseRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionCounts {
    pub id: String,
    pub question_type: String,
    pub correct: usize,
    pub incomplete: usize,
    pub incorrect: usize,
}

impl QuestionCounts {
    pub fn new(question: &QuestionId, counts: [usize; 3]) -> QuestionCounts {
        QuestionCounts {
            id: question.id.clone(),
            question_type: question.question_type.clone(),
            correct: counts[0],
            incomplete: counts[1],
            incorrect: counts[2],
        }
    }

    pub fn counts(&self) -> [usize; 3] {
        [self.correct, self.incomplete, self.incorrect]
    }

    pub fn total(&self) -> usize {
        self.counts().iter().sum()
    }
}

fn default_vocabulary() -> usize {
    250
}
fn default_exponent() -> f64 {
    1.2
}
fn default_signal() -> f64 {
    0.35
}
fn default_question_share() -> f64 {
    0.0
}
fn default_min_tokens() -> usize {
    8
}
fn default_max_tokens() -> usize {
    28
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    #[serde(default = "default_vocabulary")]
    pub vocabulary_size: usize,
    #[serde(default = "default_exponent")]
    pub zipf_exponent: f64,
    /// Fraction of tokens drawn from the response label's sublexicons.
    #[serde(default = "default_signal")]
    pub signal_strength: f64,
    /// Share of planted tokens taken from the question-specific sublexicon
    /// rather than the one shared across questions. Question-specific tokens
    /// still occur as background in other questions.
    #[serde(default = "default_question_share")]
    pub question_specific_share: f64,
    #[serde(default = "default_min_tokens")]
    pub min_tokens: usize,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    pub questions: Vec<QuestionCounts>,
}

impl SynthSpec {
    /// Spec with default text parameters and the given per-question counts.
    pub fn with_counts(seed: u64, questions: Vec<QuestionCounts>) -> SynthSpec {
        SynthSpec {
            seed,
            vocabulary_size: default_vocabulary(),
            zipf_exponent: default_exponent(),
            signal_strength: default_signal(),
            question_specific_share: default_question_share(),
            min_tokens: default_min_tokens(),
            max_tokens: default_max_tokens(),
            questions,
        }
    }

    /// Label counts of the three published questions.
    pub fn published_counts(seed: u64) -> SynthSpec {
        SynthSpec::with_counts(
            seed,
            vec![
                QuestionCounts::new(&QuestionId::q1(), [1558, 473, 830]),
                QuestionCounts::new(&QuestionId::q2(), [1530, 445, 886]),
                QuestionCounts::new(&QuestionId::q3(), [1877, 609, 375]),
            ],
        )
    }

    pub fn from_toml(text: &str) -> Result<SynthSpec, CorpusError> {
        let spec: SynthSpec =
            toml::from_str(text).map_err(|e| CorpusError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    fn group_count(&self) -> usize {
        3 + 3 * self.questions.len()
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::InvalidSpec(m));
        if self.questions.is_empty() {
            return bad("at least one question is required".into());
        }
        if self.vocabulary_size < 3 * Label::ALL.len() || self.vocabulary_size < self.group_count()
        {
            return bad(format!(
                "vocabulary_size {} too small (need >= {})",
                self.vocabulary_size,
                (3 * Label::ALL.len()).max(self.group_count())
            ));
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
            return bad(format!(
                "zipf_exponent must be finite and >= 0, got {}",
                self.zipf_exponent
            ));
        }
        for (name, v) in [
            ("signal_strength", self.signal_strength),
            ("question_specific_share", self.question_specific_share),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return bad("need 1 <= min_tokens <= max_tokens".into());
        }
        for (i, q) in self.questions.iter().enumerate() {
            if q.id.trim().is_empty() || q.question_type.trim().is_empty() {
                return bad(format!(
                    "question {i} needs a nonempty id and question_type"
                ));
            }
            if self.questions[..i].iter().any(|p| p.id == q.id) {
                return bad(format!("question id {:?} repeated", q.id));
            }
        }
        Ok(())
    }
}

/// Cumulative distribution over token ranks (0-based).
struct Cdf {
    tokens: Vec<usize>,
    cumulative: Vec<f64>,
}

impl Cdf {
    fn new(tokens: Vec<usize>, weights: &[f64]) -> Cdf {
        let mut acc = 0.0;
        let cumulative = tokens
            .iter()
            .map(|&t| {
                acc += weights[t];
                acc
            })
            .collect();
        Cdf { tokens, cumulative }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("nonempty cdf");
        let u = rng.gen::<f64>() * total;
        let i = self.cumulative.partition_point(|&c| c <= u);
        self.tokens[i.min(self.tokens.len() - 1)]
    }
}

/// Greedy mass balancing: each rank goes to the group furthest below its target.
fn assign_groups(weights: &[f64], targets: &[f64]) -> Vec<usize> {
    let mut filled = vec![0.0; targets.len()];
    weights
        .iter()
        .map(|&w| {
            let mut best = 0;
            for g in 1..targets.len() {
                if targets[g] - filled[g] > targets[best] - filled[best] {
                    best = g;
                }
            }
            filled[best] += w;
            best
        })
        .collect()
}

pub fn generate_synthetic_corpus(spec: &SynthSpec) -> Result<Corpus, CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let vocab = spec.vocabulary_size;
    let n_questions = spec.questions.len();

    let mut weights: Vec<f64> = (1..=vocab)
        .map(|r| (r as f64).powf(-spec.zipf_exponent))
        .collect();
    let norm: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= norm);

    let qshare = spec.question_specific_share;
    let mut targets = vec![(1.0 - qshare) / 3.0; 3];
    targets.extend(std::iter::repeat_n(
        qshare / (3 * n_questions) as f64,
        3 * n_questions,
    ));
    let group_of = assign_groups(&weights, &targets);

    let background = Cdf::new((0..vocab).collect(), &weights);
    let group_cdf = |g: usize| {
        let members: Vec<usize> = (0..vocab).filter(|&t| group_of[t] == g).collect();
        (!members.is_empty()).then(|| Cdf::new(members, &weights))
    };
    let shared: Vec<Option<Cdf>> = (0..3).map(group_cdf).collect();
    let specific: Vec<Option<Cdf>> = (0..3 * n_questions).map(|g| group_cdf(3 + g)).collect();

    let max_students = spec
        .questions
        .iter()
        .map(QuestionCounts::total)
        .max()
        .unwrap_or(0);
    let width = max_students.max(1).to_string().len();

    let mut records = Vec::new();
    for (qi, qc) in spec.questions.iter().enumerate() {
        let question =
            QuestionId::new(qc.id.clone(), qc.question_type.clone()).expect("validated question");
        let mut labels: Vec<Label> = Label::ALL
            .iter()
            .zip(qc.counts())
            .flat_map(|(&l, n)| std::iter::repeat_n(l, n))
            .collect();
        labels.shuffle(&mut rng);

        for (si, label) in labels.into_iter().enumerate() {
            let len = rng.gen_range(spec.min_tokens..=spec.max_tokens);
            let mut words = Vec::with_capacity(len);
            for _ in 0..len {
                let planted = rng.gen::<f64>() < spec.signal_strength;
                let token = if planted {
                    let from_specific = rng.gen::<f64>() < qshare;
                    let cdf = if from_specific {
                        specific[3 * qi + label.index()].as_ref()
                    } else {
                        shared[label.index()].as_ref()
                    };
                    match cdf {
                        Some(c) => c.sample(&mut rng),
                        None => background.sample(&mut rng),
                    }
                } else {
                    background.sample(&mut rng)
                };
                words.push(format!("w{}", token + 1));
            }
            records.push(ResponseRecord::new(
                format!("s{:0width$}", si + 1),
                question.clone(),
                words.join(" "),
                label,
            ));
        }
    }
    Corpus::new(records, Provenance::Synthetic { spec: spec.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::corpus_stats;

    fn small_spec(seed: u64) -> SynthSpec {
        SynthSpec::with_counts(
            seed,
            vec![
                QuestionCounts::new(&QuestionId::q1(), [10, 10, 10]),
                QuestionCounts::new(&QuestionId::q2(), [5, 3, 2]),
            ],
        )
    }

    #[test]
    fn determinism() {
        let a = generate_synthetic_corpus(&small_spec(3)).unwrap();
        let b = generate_synthetic_corpus(&small_spec(3)).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        let c = generate_synthetic_corpus(&small_spec(4)).unwrap();
        assert_ne!(a.to_jsonl(), c.to_jsonl());
    }

    #[test]
    fn exact_counts() {
        let c = generate_synthetic_corpus(&small_spec(1)).unwrap();
        let stats = corpus_stats(&c);
        assert_eq!(stats.question("Q1").unwrap().counts, [10, 10, 10]);
        assert_eq!(stats.question("Q2").unwrap().counts, [5, 3, 2]);
        assert_eq!(stats.total, 40);
    }

    #[test]
    fn invalid_specs() {
        let mut s = small_spec(1);
        s.vocabulary_size = 8;
        assert!(matches!(
            generate_synthetic_corpus(&s),
            Err(CorpusError::InvalidSpec(_))
        ));
        let mut s = small_spec(1);
        s.signal_strength = 1.5;
        assert!(s.validate().is_err());
        let mut s = small_spec(1);
        s.zipf_exponent = -0.1;
        assert!(s.validate().is_err());
        let mut s = small_spec(1);
        s.min_tokens = 0;
        assert!(s.validate().is_err());
        let mut s = small_spec(1);
        s.questions[1].id = "Q1".into();
        assert!(s.validate().is_err());
    }

    #[test]
    fn toml_round_trip_with_defaults() {
        let text = r#"
seed = 9

[[questions]]
id = "Q1"
question_type = "replication"
correct = 2
incomplete = 1
incorrect = 1
"#;
        let spec = SynthSpec::from_toml(text).unwrap();
        assert_eq!(spec.vocabulary_size, 250);
        assert_eq!(SynthSpec::from_toml(&spec.to_toml()).unwrap(), spec);
    }

    #[test]
    fn group_masses_track_targets() {
        let weights: Vec<f64> = (1..=250).map(|r| (r as f64).powf(-1.2)).collect();
        let total: f64 = weights.iter().sum();
        let w: Vec<f64> = weights.iter().map(|x| x / total).collect();
        let targets = [0.3, 0.3, 0.2, 0.2];
        let groups = assign_groups(&w, &targets);
        let mut mass = [0.0; 4];
        for (t, g) in groups.iter().enumerate() {
            mass[*g] += w[t];
        }
        for g in 0..4 {
            // The head word alone carries ~0.25 of the mass, so balance is coarse.
            assert!((mass[g] - targets[g]).abs() < 0.1, "{mass:?}");
        }
    }
}
