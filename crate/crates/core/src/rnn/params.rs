//! Parameter sets of the LSTM, the additive attention scorer and the output
//! softmax layer. All matrices are dense row-major `Vec<f64>`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::RnnError;

/// Gate blocks are stacked in this order along the `4H` axis.
pub const GATE_ORDER: [&str; 4] = ["input", "forget", "cell", "output"];

const FORGET_BIAS: f64 = 1.0;

/// LSTM weights: `w_x` is `4H × D`, `w_h` is `4H × H`, `bias` is `4H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub w_x: Vec<f64>,
    pub w_h: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Additive attention scorer `u · tanh(W_c h + b)`: `w_c` is `A × H`,
/// `bias` and `score` are `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub hidden: usize,
    pub attention_dim: usize,
    pub w_c: Vec<f64>,
    pub bias: Vec<f64>,
    pub score: Vec<f64>,
}

/// Two-way softmax layer: `weights` is `2 × H` (row 0 positive, row 1
/// negative), `bias` is `2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub hidden: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub lstm: LstmParams,
    pub attention: AttentionParams,
    pub classifier: ClassifierParams,
}

/// Gradient accumulators share the parameter layout.
pub type Gradients = ModelParams;

/// Model dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub input_dim: usize,
    pub hidden: usize,
    pub attention_dim: usize,
}

impl ModelShape {
    pub fn new(input_dim: usize, hidden: usize) -> Self {
        ModelShape {
            input_dim,
            hidden,
            attention_dim: hidden,
        }
    }
}

/// Names of the tensors in the order returned by [`ModelParams::tensors`].
pub const TENSOR_NAMES: [&str; 8] = [
    "lstm.w_x",
    "lstm.w_h",
    "lstm.bias",
    "attention.w_c",
    "attention.bias",
    "attention.score",
    "classifier.weights",
    "classifier.bias",
];

impl ModelParams {
    pub fn zeros(shape: ModelShape) -> Self {
        let ModelShape {
            input_dim: d,
            hidden: h,
            attention_dim: a,
        } = shape;
        ModelParams {
            lstm: LstmParams {
                input_dim: d,
                hidden: h,
                w_x: vec![0.0; 4 * h * d],
                w_h: vec![0.0; 4 * h * h],
                bias: vec![0.0; 4 * h],
            },
            attention: AttentionParams {
                hidden: h,
                attention_dim: a,
                w_c: vec![0.0; a * h],
                bias: vec![0.0; a],
                score: vec![0.0; a],
            },
            classifier: ClassifierParams {
                hidden: h,
                weights: vec![0.0; 2 * h],
                bias: vec![0.0; 2],
            },
        }
    }

    /// Uniform `±1/√H` weights, zero biases except the forget gate (1.0).
    ///
    /// `attention_scale` multiplies the attention scorer's weight range.
    pub fn init<R: Rng>(shape: ModelShape, attention_scale: f64, rng: &mut R) -> Self {
        let mut params = Self::zeros(shape);
        let h = shape.hidden;
        let bound = 1.0 / (h as f64).sqrt();
        fill_uniform(&mut params.lstm.w_x, bound, rng);
        fill_uniform(&mut params.lstm.w_h, bound, rng);
        params.lstm.bias[h..2 * h].fill(FORGET_BIAS);
        let attn_bound = attention_scale * bound;
        fill_uniform(&mut params.attention.w_c, attn_bound, rng);
        fill_uniform(
            &mut params.attention.score,
            attention_scale / (shape.attention_dim as f64).sqrt(),
            rng,
        );
        fill_uniform(&mut params.classifier.weights, bound, rng);
        params
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            input_dim: self.lstm.input_dim,
            hidden: self.lstm.hidden,
            attention_dim: self.attention.attention_dim,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape())
    }

    pub fn tensors(&self) -> [&[f64]; 8] {
        [
            &self.lstm.w_x,
            &self.lstm.w_h,
            &self.lstm.bias,
            &self.attention.w_c,
            &self.attention.bias,
            &self.attention.score,
            &self.classifier.weights,
            &self.classifier.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 8] {
        [
            &mut self.lstm.w_x,
            &mut self.lstm.w_h,
            &mut self.lstm.bias,
            &mut self.attention.w_c,
            &mut self.attention.bias,
            &mut self.attention.score,
            &mut self.classifier.weights,
            &mut self.classifier.bias,
        ]
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for tensor in self.tensors_mut() {
            tensor.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// FNV-1a hash over the bit patterns of every parameter. Used to match a
    /// forward cache to the parameters that produced it.
    pub fn fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for tensor in self.tensors() {
            for value in tensor {
                hash ^= value.to_bits();
                hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        hash
    }

    /// Checks tensor lengths against the declared dimensions and finiteness.
    pub fn validate(&self) -> Result<(), RnnError> {
        let shape = self.shape();
        let ModelShape {
            input_dim: d,
            hidden: h,
            attention_dim: a,
        } = shape;
        if h == 0 || a == 0 || d == 0 {
            return Err(RnnError::Shape(format!("degenerate model shape {shape:?}")));
        }
        if self.attention.hidden != h || self.classifier.hidden != h {
            return Err(RnnError::Shape("hidden sizes disagree across layers".into()));
        }
        let expected = Self::zeros(shape);
        for ((name, got), want) in TENSOR_NAMES.iter().zip(self.tensors()).zip(expected.tensors()) {
            if got.len() != want.len() {
                return Err(RnnError::Shape(format!(
                    "{name} has {} entries, expected {}",
                    got.len(),
                    want.len()
                )));
            }
        }
        if !self.all_finite() {
            return Err(RnnError::NonFinite);
        }
        Ok(())
    }
}

fn fill_uniform<R: Rng>(values: &mut [f64], bound: f64, rng: &mut R) {
    if bound <= 0.0 {
        return;
    }
    for v in values {
        *v = rng.random_range(-bound..bound);
    }
}
