//! Bag-of-tokens linear softmax classifier.
//!
//! Tokens are hashed into a fixed number of buckets, so the feature space is
//! shared across questions and a checkpoint trained on one question can be
//! fine-tuned on another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{softmax, Backend};
use crate::corpus::ResponseRecord;
use crate::text::{fnv1a, tokenize};

pub const TOY_BACKEND_ID: &str = "toy-bow";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyOptions {
    pub buckets: usize,
    /// Initial weights are uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
}

impl Default for ToyOptions {
    fn default() -> Self {
        ToyOptions {
            buckets: 1024,
            init_scale: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyBackend {
    options: ToyOptions,
}

impl ToyBackend {
    pub fn new(options: ToyOptions) -> ToyBackend {
        assert!(options.buckets >= 1);
        ToyBackend { options }
    }

    pub fn options(&self) -> ToyOptions {
        self.options
    }

    pub fn n_params(&self) -> usize {
        3 * self.options.buckets + 3
    }

    /// Sparse L2-normalized term counts, sorted by bucket.
    pub fn features(&self, text: &str) -> Vec<(usize, f64)> {
        let b = self.options.buckets as u64;
        let mut idx: Vec<usize> = tokenize(text)
            .iter()
            .map(|t| (fnv1a(t.as_bytes()) % b) as usize)
            .collect();
        idx.sort_unstable();
        let mut out: Vec<(usize, f64)> = Vec::new();
        for i in idx {
            match out.last_mut() {
                Some((j, c)) if *j == i => *c += 1.0,
                _ => out.push((i, 1.0)),
            }
        }
        let norm = out.iter().map(|(_, c)| c * c).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.iter_mut().for_each(|(_, c)| *c /= norm);
        }
        out
    }

    fn logits(&self, params: &[f64], x: &[(usize, f64)]) -> [f64; 3] {
        let b = self.options.buckets;
        let bias = &params[3 * b..];
        let mut z = [bias[0], bias[1], bias[2]];
        for (c, zc) in z.iter_mut().enumerate() {
            let row = &params[c * b..(c + 1) * b];
            *zc += x.iter().map(|&(j, v)| row[j] * v).sum::<f64>();
        }
        z
    }
}

impl Backend for ToyBackend {
    fn id(&self) -> &str {
        TOY_BACKEND_ID
    }

    fn options(&self) -> serde_json::Value {
        serde_json::to_value(self.options).expect("options serialize")
    }

    fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = self.options.init_scale;
        let mut p: Vec<f64> = (0..3 * self.options.buckets)
            .map(|_| if s > 0.0 { rng.gen_range(-s..=s) } else { 0.0 })
            .collect();
        p.extend([0.0; 3]);
        p
    }

    fn predict_proba(&self, params: &[f64], text: &str) -> [f64; 3] {
        softmax(self.logits(params, &self.features(text)))
    }

    fn loss_and_grad(&self, params: &[f64], batch: &[&ResponseRecord]) -> (f64, Vec<f64>) {
        let b = self.options.buckets;
        let mut grad = vec![0.0; params.len()];
        if batch.is_empty() {
            return (0.0, grad);
        }
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for r in batch {
            let x = self.features(&r.text);
            let p = softmax(self.logits(params, &x));
            let y = r.label.index();
            loss -= p[y].max(f64::MIN_POSITIVE).ln() * scale;
            for c in 0..3 {
                let delta = (p[c] - if c == y { 1.0 } else { 0.0 }) * scale;
                for &(j, v) in &x {
                    grad[c * b + j] += delta * v;
                }
                grad[3 * b + c] += delta;
            }
        }
        (loss, grad)
    }
}
