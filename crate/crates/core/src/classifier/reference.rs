//! Encoder + intermediate layer + three-way head.
//!
//! The head is a 512-unit ReLU layer over the encoder's 768-wide pooled
//! output followed by a 3-way softmax. The encoder sits behind
//! [`SentenceEncoder`]; the built-in [`HashingEncoder`] is a parameter-free
//! stand-in that makes the head trainable without a mounted pretrained
//! transformer. Parameter accounting for the standard 12-layer encoder is
//! reported by [`ArchitectureReport`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{softmax, Backend};
use crate::corpus::ResponseRecord;
use crate::text::{fnv1a, tokenize};

pub const REFERENCE_BACKEND_ID: &str = "reference-encoder";

/// Transformer encoder dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderShape {
    pub layers: usize,
    pub attention_heads: usize,
    pub hidden: usize,
    pub intermediate: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub type_vocab: usize,
}

impl EncoderShape {
    /// The standard cased base encoder.
    pub fn base_cased() -> EncoderShape {
        EncoderShape {
            layers: 12,
            attention_heads: 12,
            hidden: 768,
            intermediate: 3072,
            vocab_size: 28996,
            max_positions: 512,
            type_vocab: 2,
        }
    }

    /// Embeddings + encoder layers + pooler.
    pub fn parameter_count(&self) -> usize {
        let h = self.hidden;
        let layer_norm = 2 * h;
        let embeddings = (self.vocab_size + self.max_positions + self.type_vocab) * h + layer_norm;
        let attention = 4 * (h * h + h) + layer_norm;
        let feed_forward =
            (h * self.intermediate + self.intermediate) + (self.intermediate * h + h) + layer_norm;
        let pooler = h * h + h;
        embeddings + self.layers * (attention + feed_forward) + pooler
    }
}

pub fn dense_parameter_count(inputs: usize, outputs: usize) -> usize {
    inputs * outputs + outputs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureReport {
    pub encoder: EncoderShape,
    pub encoder_parameters: usize,
    pub intermediate_units: usize,
    pub intermediate_parameters: usize,
    pub head_units: usize,
    pub head_parameters: usize,
    pub total_parameters: usize,
}

impl ArchitectureReport {
    pub fn new(encoder: EncoderShape, intermediate_units: usize) -> ArchitectureReport {
        let encoder_parameters = encoder.parameter_count();
        let intermediate_parameters = dense_parameter_count(encoder.hidden, intermediate_units);
        let head_parameters = dense_parameter_count(intermediate_units, 3);
        ArchitectureReport {
            encoder,
            encoder_parameters,
            intermediate_units,
            intermediate_parameters,
            head_units: 3,
            head_parameters,
            total_parameters: encoder_parameters + intermediate_parameters + head_parameters,
        }
    }
}

pub trait SentenceEncoder: Send + Sync {
    fn width(&self) -> usize;
    fn encode(&self, text: &str) -> Vec<f64>;
}

/// Signed feature hashing into a dense vector, L2-normalized.
#[derive(Debug, Clone, Copy)]
pub struct HashingEncoder {
    width: usize,
}

impl HashingEncoder {
    pub fn new(width: usize) -> HashingEncoder {
        HashingEncoder { width }
    }
}

impl SentenceEncoder for HashingEncoder {
    fn width(&self) -> usize {
        self.width
    }

    fn encode(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.width];
        for tok in tokenize(text) {
            let h = fnv1a(tok.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.width as u64) as usize] += sign;
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceOptions {
    pub encoder_width: usize,
    pub intermediate_units: usize,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        ReferenceOptions {
            encoder_width: 768,
            intermediate_units: 512,
        }
    }
}

pub struct ReferenceBackend {
    options: ReferenceOptions,
    encoder: Box<dyn SentenceEncoder>,
}

struct Forward {
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    probs: [f64; 3],
}

impl ReferenceBackend {
    pub fn new(options: ReferenceOptions) -> ReferenceBackend {
        ReferenceBackend {
            encoder: Box::new(HashingEncoder::new(options.encoder_width)),
            options,
        }
    }

    pub fn with_encoder(
        options: ReferenceOptions,
        encoder: Box<dyn SentenceEncoder>,
    ) -> ReferenceBackend {
        assert_eq!(encoder.width(), options.encoder_width);
        ReferenceBackend { options, encoder }
    }

    /// Parameter accounting with the standard encoder mounted.
    pub fn architecture_report(&self) -> ArchitectureReport {
        let mut shape = EncoderShape::base_cased();
        shape.hidden = self.options.encoder_width;
        ArchitectureReport::new(shape, self.options.intermediate_units)
    }

    pub fn n_params(&self) -> usize {
        dense_parameter_count(self.options.encoder_width, self.options.intermediate_units)
            + dense_parameter_count(self.options.intermediate_units, 3)
    }

    // Layout: W1 (units × width), b1 (units), W2 (3 × units), b2 (3).
    fn offsets(&self) -> (usize, usize, usize, usize) {
        let d = self.options.encoder_width;
        let h = self.options.intermediate_units;
        let w1 = 0;
        let b1 = h * d;
        let w2 = b1 + h;
        let b2 = w2 + 3 * h;
        (w1, b1, w2, b2)
    }

    fn forward(&self, params: &[f64], x: &[f64]) -> Forward {
        let d = self.options.encoder_width;
        let h = self.options.intermediate_units;
        let (w1, b1, w2, b2) = self.offsets();
        let hidden_pre: Vec<f64> = (0..h)
            .map(|u| {
                let row = &params[w1 + u * d..w1 + (u + 1) * d];
                params[b1 + u] + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>()
            })
            .collect();
        let hidden: Vec<f64> = hidden_pre.iter().map(|&a| a.max(0.0)).collect();
        let mut z = [0.0; 3];
        for (c, zc) in z.iter_mut().enumerate() {
            let row = &params[w2 + c * h..w2 + (c + 1) * h];
            *zc = params[b2 + c] + row.iter().zip(&hidden).map(|(w, a)| w * a).sum::<f64>();
        }
        Forward {
            hidden_pre,
            hidden,
            probs: softmax(z),
        }
    }
}

impl Backend for ReferenceBackend {
    fn id(&self) -> &str {
        REFERENCE_BACKEND_ID
    }

    fn options(&self) -> serde_json::Value {
        serde_json::to_value(self.options).expect("options serialize")
    }

    /// Glorot-uniform weights, zero biases.
    fn init_params(&self, seed: u64) -> Vec<f64> {
        let d = self.options.encoder_width;
        let h = self.options.intermediate_units;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Vec::with_capacity(self.n_params());
        let lim1 = (6.0 / (d + h) as f64).sqrt();
        p.extend((0..h * d).map(|_| rng.gen_range(-lim1..=lim1)));
        p.extend(std::iter::repeat_n(0.0, h));
        let lim2 = (6.0 / (h + 3) as f64).sqrt();
        p.extend((0..3 * h).map(|_| rng.gen_range(-lim2..=lim2)));
        p.extend([0.0; 3]);
        p
    }

    fn predict_proba(&self, params: &[f64], text: &str) -> [f64; 3] {
        self.forward(params, &self.encoder.encode(text)).probs
    }

    fn loss_and_grad(&self, params: &[f64], batch: &[&ResponseRecord]) -> (f64, Vec<f64>) {
        let d = self.options.encoder_width;
        let h = self.options.intermediate_units;
        let (w1, b1, w2, b2) = self.offsets();
        let mut grad = vec![0.0; params.len()];
        if batch.is_empty() {
            return (0.0, grad);
        }
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for r in batch {
            let x = self.encoder.encode(&r.text);
            let f = self.forward(params, &x);
            let y = r.label.index();
            loss -= f.probs[y].max(f64::MIN_POSITIVE).ln() * scale;
            let mut dz = [0.0; 3];
            for c in 0..3 {
                dz[c] = (f.probs[c] - if c == y { 1.0 } else { 0.0 }) * scale;
                grad[b2 + c] += dz[c];
                for u in 0..h {
                    grad[w2 + c * h + u] += dz[c] * f.hidden[u];
                }
            }
            for u in 0..h {
                if f.hidden_pre[u] <= 0.0 {
                    continue;
                }
                let da: f64 = (0..3).map(|c| dz[c] * params[w2 + c * h + u]).sum();
                grad[b1 + u] += da;
                let row = &mut grad[w1 + u * d..w1 + (u + 1) * d];
                for (g, xi) in row.iter_mut().zip(&x) {
                    *g += da * xi;
                }
            }
        }
        (loss, grad)
    }
}
