//! Forward pass (LSTM recurrence, additive attention pooling, softmax output)
//! and exact backpropagation through time.
//!
//! Only the first `len` steps of an input sequence are read; anything after
//! is padding and never touches the computation.

use super::params::{AttentionParams, ClassifierParams, Gradients, LstmParams, ModelParams};
use super::RnnError;
use crate::dataset::Label;

/// Lower clamp on the probability inside the cross-entropy log.
pub const LOSS_EPSILON: f64 = 1e-12;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out += M · v` for a row-major `rows × cols` matrix.
fn mat_vec_acc(m: &[f64], cols: usize, v: &[f64], out: &mut [f64]) {
    for (row, o) in m.chunks_exact(cols).zip(out.iter_mut()) {
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += Mᵀ · v` for a row-major `rows × cols` matrix.
fn mat_t_vec_acc(m: &[f64], cols: usize, v: &[f64], out: &mut [f64]) {
    for (row, &scale) in m.chunks_exact(cols).zip(v) {
        if scale == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * scale;
        }
    }
}

/// `grad += u ⊗ v` for a row-major `u.len() × v.len()` gradient.
fn outer_acc(grad: &mut [f64], u: &[f64], v: &[f64]) {
    for (row, &scale) in grad.chunks_exact_mut(v.len()).zip(u) {
        if scale == 0.0 {
            continue;
        }
        for (g, x) in row.iter_mut().zip(v) {
            *g += scale * x;
        }
    }
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Per-step activations of the LSTM for the valid prefix of a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmTrace {
    /// Post-activation gates `[i, f, g, o]`, `4H` per step.
    pub gates: Vec<Vec<f64>>,
    pub cells: Vec<Vec<f64>>,
    pub hiddens: Vec<Vec<f64>>,
}

/// Attention scorer activations, weights and pooled context.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    /// `tanh(W_c h_t + b)` per step.
    pub projections: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub inputs: Vec<Vec<f64>>,
    pub lstm: LstmTrace,
    pub attention: AttentionTrace,
    pub probabilities: [f64; 2],
    params_fingerprint: u64,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

fn check_sequence(input_dim: usize, inputs: &[Vec<f64>], len: usize) -> Result<(), RnnError> {
    if len == 0 {
        return Err(RnnError::EmptySequence);
    }
    if inputs.len() < len {
        return Err(RnnError::Shape(format!(
            "sequence has {} steps but length {len} was requested",
            inputs.len()
        )));
    }
    if let Some(bad) = inputs[..len].iter().find(|x| x.len() != input_dim) {
        return Err(RnnError::Shape(format!(
            "input vector has dimension {}, model expects {input_dim}",
            bad.len()
        )));
    }
    Ok(())
}

/// Runs the LSTM over the first `len` steps, starting from zero hidden and
/// cell state.
pub fn lstm_forward(params: &LstmParams, inputs: &[Vec<f64>], len: usize) -> Result<LstmTrace, RnnError> {
    check_sequence(params.input_dim, inputs, len)?;
    let h = params.hidden;
    let mut trace = LstmTrace {
        gates: Vec::with_capacity(len),
        cells: Vec::with_capacity(len),
        hiddens: Vec::with_capacity(len),
    };
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    for x in &inputs[..len] {
        let mut z = params.bias.clone();
        mat_vec_acc(&params.w_x, params.input_dim, x, &mut z);
        mat_vec_acc(&params.w_h, h, &h_prev, &mut z);
        let mut cell = vec![0.0; h];
        let mut hidden = vec![0.0; h];
        for k in 0..h {
            z[k] = sigmoid(z[k]);
            z[h + k] = sigmoid(z[h + k]);
            z[2 * h + k] = z[2 * h + k].tanh();
            z[3 * h + k] = sigmoid(z[3 * h + k]);
            cell[k] = z[h + k] * c_prev[k] + z[k] * z[2 * h + k];
            hidden[k] = z[3 * h + k] * cell[k].tanh();
        }
        c_prev.clone_from(&cell);
        h_prev.clone_from(&hidden);
        trace.gates.push(z);
        trace.cells.push(cell);
        trace.hiddens.push(hidden);
    }
    Ok(trace)
}

/// Scores each hidden state, softmaxes the scores and pools the context
/// `c = Σ α_t h_t`.
pub fn attention_forward(params: &AttentionParams, hiddens: &[Vec<f64>]) -> Result<AttentionTrace, RnnError> {
    if hiddens.is_empty() {
        return Err(RnnError::EmptySequence);
    }
    let h = params.hidden;
    if let Some(bad) = hiddens.iter().find(|v| v.len() != h) {
        return Err(RnnError::Shape(format!(
            "hidden state has dimension {}, attention expects {h}",
            bad.len()
        )));
    }
    let mut projections = Vec::with_capacity(hiddens.len());
    let mut scores = Vec::with_capacity(hiddens.len());
    for hidden in hiddens {
        let mut proj = params.bias.clone();
        mat_vec_acc(&params.w_c, h, hidden, &mut proj);
        proj.iter_mut().for_each(|v| *v = v.tanh());
        scores.push(params.score.iter().zip(&proj).map(|(u, a)| u * a).sum());
        projections.push(proj);
    }
    let weights = softmax(&scores);
    let mut context = vec![0.0; h];
    for (alpha, hidden) in weights.iter().zip(hiddens) {
        for (c, v) in context.iter_mut().zip(hidden) {
            *c += alpha * v;
        }
    }
    Ok(AttentionTrace {
        projections,
        scores,
        weights,
        context,
    })
}

/// Class probabilities `(p_pos, p_neg)` for a pooled context.
pub fn classify(params: &ClassifierParams, context: &[f64]) -> [f64; 2] {
    let mut logits = params.bias.clone();
    mat_vec_acc(&params.weights, params.hidden, context, &mut logits);
    let p = softmax(&logits);
    [p[0], p[1]]
}

/// Cross-entropy `−ln p_label`, with the probability clamped below at
/// [`LOSS_EPSILON`].
pub fn loss(probabilities: [f64; 2], label: Label) -> f64 {
    -probabilities[label.index()].max(LOSS_EPSILON).ln()
}

/// Full forward pass over the first `len` steps of `inputs`.
pub fn forward(params: &ModelParams, inputs: &[Vec<f64>], len: usize) -> Result<ForwardCache, RnnError> {
    forward_tagged(params, params.fingerprint(), inputs, len)
}

pub(crate) fn forward_tagged(
    params: &ModelParams,
    fingerprint: u64,
    inputs: &[Vec<f64>],
    len: usize,
) -> Result<ForwardCache, RnnError> {
    let lstm = lstm_forward(&params.lstm, inputs, len)?;
    let attention = attention_forward(&params.attention, &lstm.hiddens)?;
    let probabilities = classify(&params.classifier, &attention.context);
    Ok(ForwardCache {
        inputs: inputs[..len].to_vec(),
        lstm,
        attention,
        probabilities,
        params_fingerprint: fingerprint,
    })
}

/// Gradient of the cross-entropy loss with respect to every parameter.
///
/// Fails if `cache` was produced by different parameters.
pub fn backward(params: &ModelParams, cache: &ForwardCache, label: Label) -> Result<Gradients, RnnError> {
    let mut grads = params.zeros_like();
    backward_tagged(params, params.fingerprint(), cache, label, &mut grads)?;
    Ok(grads)
}

/// Accumulates the gradient for one instance into `grads`.
pub(crate) fn backward_tagged(
    params: &ModelParams,
    fingerprint: u64,
    cache: &ForwardCache,
    label: Label,
    grads: &mut Gradients,
) -> Result<(), RnnError> {
    if cache.params_fingerprint != fingerprint {
        return Err(RnnError::StaleCache);
    }
    let h = params.lstm.hidden;
    let d = params.lstm.input_dim;
    let a_dim = params.attention.attention_dim;
    let len = cache.len();

    // Output layer. Inside the clamp the loss is constant, so its gradient vanishes.
    let p_label = cache.probabilities[label.index()];
    if p_label <= LOSS_EPSILON {
        return Ok(());
    }
    let mut d_logits = cache.probabilities;
    d_logits[label.index()] -= 1.0;
    let context = &cache.attention.context;
    outer_acc(&mut grads.classifier.weights, &d_logits, context);
    for (g, dl) in grads.classifier.bias.iter_mut().zip(d_logits) {
        *g += dl;
    }
    let mut d_context = vec![0.0; h];
    mat_t_vec_acc(&params.classifier.weights, h, &d_logits, &mut d_context);

    // Attention pooling: c = Σ α_t h_t reaches h_t directly and through α_t.
    let alphas = &cache.attention.weights;
    let hiddens = &cache.lstm.hiddens;
    let d_alpha: Vec<f64> = hiddens
        .iter()
        .map(|hid| hid.iter().zip(&d_context).map(|(a, b)| a * b).sum())
        .collect();
    let weighted: f64 = alphas.iter().zip(&d_alpha).map(|(a, b)| a * b).sum();
    let mut d_hidden: Vec<Vec<f64>> = alphas
        .iter()
        .map(|alpha| d_context.iter().map(|dc| alpha * dc).collect())
        .collect();
    let mut d_proj_pre = vec![0.0; a_dim];
    for t in 0..len {
        let d_score = alphas[t] * (d_alpha[t] - weighted);
        let proj = &cache.attention.projections[t];
        for k in 0..a_dim {
            grads.attention.score[k] += d_score * proj[k];
            d_proj_pre[k] = d_score * params.attention.score[k] * (1.0 - proj[k] * proj[k]);
        }
        outer_acc(&mut grads.attention.w_c, &d_proj_pre, &hiddens[t]);
        for (g, v) in grads.attention.bias.iter_mut().zip(&d_proj_pre) {
            *g += v;
        }
        mat_t_vec_acc(&params.attention.w_c, h, &d_proj_pre, &mut d_hidden[t]);
    }

    // Backpropagation through time.
    let zeros = vec![0.0; h];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    for t in (0..len).rev() {
        let gates = &cache.lstm.gates[t];
        let cell = &cache.lstm.cells[t];
        let c_prev = if t > 0 { &cache.lstm.cells[t - 1] } else { &zeros };
        let h_prev = if t > 0 { &hiddens[t - 1] } else { &zeros };
        for k in 0..h {
            let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
            let dh = d_hidden[t][k] + dh_next[k];
            let tc = cell[k].tanh();
            let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
            dz[k] = dc * g * i * (1.0 - i);
            dz[h + k] = dc * c_prev[k] * f * (1.0 - f);
            dz[2 * h + k] = dc * i * (1.0 - g * g);
            dz[3 * h + k] = dh * tc * o * (1.0 - o);
            dc_next[k] = dc * f;
        }
        outer_acc(&mut grads.lstm.w_x, &dz, &cache.inputs[t]);
        outer_acc(&mut grads.lstm.w_h, &dz, h_prev);
        for (g, v) in grads.lstm.bias.iter_mut().zip(&dz) {
            *g += v;
        }
        dh_next.fill(0.0);
        mat_t_vec_acc(&params.lstm.w_h, h, &dz, &mut dh_next);
    }
    debug_assert_eq!(grads.lstm.w_x.len(), 4 * h * d);
    Ok(())
}
