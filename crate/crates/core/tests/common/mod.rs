#![allow(dead_code)]

use asag::classifier::Backend;
use asag::corpus::Provenance;
use asag::{Corpus, Label, QuestionId, ResponseRecord};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_label<R: Rng>(rng: &mut R) -> Label {
    Label::ALL[rng.gen_range(0..3)]
}

/// A corpus with `students` students, each answering a random nonempty
/// subset of up to three questions.
pub fn random_corpus<R: Rng>(rng: &mut R, students: usize) -> Corpus {
    let qs = [QuestionId::q1(), QuestionId::q2(), QuestionId::q3()];
    let mut records = Vec::new();
    for s in 0..students {
        let mut answered = false;
        for (i, q) in qs.iter().enumerate() {
            if rng.gen_bool(0.8) || (i == 2 && !answered) {
                answered = true;
                records.push(ResponseRecord::new(
                    format!("s{s:04}"),
                    q.clone(),
                    format!("answer {s} {i}"),
                    random_label(rng),
                ));
            }
        }
    }
    Corpus::new(records, Provenance::Constructed).unwrap()
}

/// Records for one question with the given per-label counts.
pub fn records_with_counts(counts: [usize; 3], prefix: &str) -> Vec<ResponseRecord> {
    let mut out = Vec::new();
    for (li, &n) in counts.iter().enumerate() {
        for i in 0..n {
            out.push(ResponseRecord::new(
                format!("{prefix}{li}-{i}"),
                QuestionId::q2(),
                format!("text {li} {i}"),
                Label::ALL[li],
            ));
        }
    }
    out
}

/// A backend whose validation accuracy follows a script.
///
/// `params[0]` counts epochs: its gradient is a constant -1, so with one
/// batch per epoch and learning rate 1 each Adam step adds almost exactly 1.
/// `params[1]` drifts with the epoch so restored parameters are
/// distinguishable. Validation records carry text `v{i}`; the first
/// `round(script[epoch - 1] * n_val)` of them are predicted correctly.
pub struct ScriptedBackend {
    pub script: Vec<f64>,
    pub n_val: usize,
}

impl ScriptedBackend {
    pub fn records(&self, n_train: usize) -> (Vec<ResponseRecord>, Vec<ResponseRecord>) {
        let q = QuestionId::q1();
        let train = (0..n_train)
            .map(|i| {
                ResponseRecord::new(format!("t{i}"), q.clone(), format!("t{i}"), Label::Correct)
            })
            .collect();
        let val = (0..self.n_val)
            .map(|i| {
                ResponseRecord::new(format!("v{i}"), q.clone(), format!("v{i}"), Label::Correct)
            })
            .collect();
        (train, val)
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        "scripted"
    }

    fn options(&self) -> serde_json::Value {
        serde_json::Value::Null
    }

    fn init_params(&self, _seed: u64) -> Vec<f64> {
        vec![0.0, 0.0]
    }

    fn predict_proba(&self, params: &[f64], text: &str) -> [f64; 3] {
        let epoch = params[0].round() as usize;
        let acc = match epoch {
            0 => 0.0,
            e => self.script[(e - 1).min(self.script.len() - 1)],
        };
        let hits = (acc * self.n_val as f64).round() as usize;
        let idx = text
            .strip_prefix('v')
            .and_then(|s| s.parse::<usize>().ok())
            .unwrap_or(usize::MAX);
        if idx < hits {
            [1.0, 0.0, 0.0]
        } else {
            [0.0, 0.0, 1.0]
        }
    }

    fn loss_and_grad(&self, params: &[f64], _batch: &[&ResponseRecord]) -> (f64, Vec<f64>) {
        (1.0, vec![-1.0, -0.5 * params[0] - 0.25])
    }
}
