//! Mini-batch Adam training, evaluation, prediction and attention extraction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cell::{backward_tagged, forward_tagged, loss};
use super::checkpoint::ModelCheckpoint;
use super::params::{Gradients, ModelParams, ModelShape};
use super::RnnError;
use crate::dataset::{Dataset, Label};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub hidden: usize,
    /// Width of the attention scorer; defaults to `hidden`.
    pub attention_dim: Option<usize>,
    /// Fraction of instances held out for testing (9:1 split by default).
    pub test_fraction: f64,
    /// Rescale the batch gradient to this L2 norm when it is exceeded.
    pub clip_norm: Option<f64>,
    /// Multiplier on the initial attention scorer weight range.
    pub attention_init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            checkpoint_every: 25,
            hidden: 32,
            attention_dim: None,
            test_fraction: 0.1,
            clip_norm: None,
            attention_init_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RnnError> {
        let bad = |msg: &str| Err(RnnError::InvalidConfig(msg.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint interval must be at least 1");
        }
        if self.hidden == 0 || self.attention_dim == Some(0) {
            return bad("hidden and attention sizes must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive and finite");
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad("test fraction must lie in [0, 1)");
        }
        if let Some(clip) = self.clip_norm {
            if !(clip.is_finite() && clip > 0.0) {
                return bad("clip norm must be positive and finite");
            }
        }
        if !(self.attention_init_scale.is_finite() && self.attention_init_scale >= 0.0) {
            return bad("attention init scale must be non-negative");
        }
        Ok(())
    }

    fn shape(&self, input_dim: usize) -> ModelShape {
        ModelShape {
            input_dim,
            hidden: self.hidden,
            attention_dim: self.attention_dim.unwrap_or(self.hidden),
        }
    }
}

/// Loss and accuracy on the train and test partitions after an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub checkpoints: Vec<ModelCheckpoint>,
    /// One entry per trained epoch, `1..=epochs`.
    pub metrics: Vec<EpochMetrics>,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

impl TrainRun {
    pub fn final_checkpoint(&self) -> &ModelCheckpoint {
        self.checkpoints
            .last()
            .expect("a run always holds the initial checkpoint")
    }

    pub fn checkpoint(&self, epoch: usize) -> Option<&ModelCheckpoint> {
        self.checkpoints.iter().find(|c| c.epoch == epoch)
    }
}

/// Progress notifications emitted during training.
#[derive(Debug, Clone, Copy)]
pub enum TrainEvent<'a> {
    Epoch(&'a EpochMetrics),
    Checkpoint(&'a ModelCheckpoint),
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first: Gradients,
    second: Gradients,
    step: i32,
}

impl Adam {
    pub fn new(shape: ModelShape, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first: ModelParams::zeros(shape),
            second: ModelParams::zeros(shape),
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &Gradients) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.first.tensors_mut())
            .zip(self.second.tensors_mut());
        for (((p, g), m), v) in tensors {
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

fn check_dims(params: &ModelParams, dataset: &Dataset) -> Result<(), RnnError> {
    if params.lstm.input_dim != dataset.input_dim() {
        return Err(RnnError::Shape(format!(
            "model expects input dimension {}, dataset encodes {}",
            params.lstm.input_dim,
            dataset.input_dim()
        )));
    }
    Ok(())
}

/// Sum of per-instance gradients, reduced in index order, plus the summed loss.
fn batch_gradient(
    params: &ModelParams,
    fingerprint: u64,
    dataset: &Dataset,
    batch: &[usize],
) -> Result<(Gradients, f64), RnnError> {
    let parts: Vec<(Gradients, f64)> = batch
        .par_iter()
        .map(|&i| {
            let inputs = dataset.inputs(i);
            let label = dataset.instances()[i].label;
            let cache = forward_tagged(params, fingerprint, inputs, inputs.len())?;
            let mut grads = params.zeros_like();
            backward_tagged(params, fingerprint, &cache, label, &mut grads)?;
            Ok((grads, loss(cache.probabilities, label)))
        })
        .collect::<Result<_, RnnError>>()?;
    let mut total = params.zeros_like();
    let mut loss_sum = 0.0;
    for (grads, l) in &parts {
        total.add_assign(grads);
        loss_sum += l;
    }
    Ok((total, loss_sum))
}

/// Mean cross-entropy and accuracy over `indices`.
pub fn evaluate(params: &ModelParams, dataset: &Dataset, indices: &[usize]) -> Result<(f64, f64), RnnError> {
    check_dims(params, dataset)?;
    if indices.is_empty() {
        return Ok((0.0, 0.0));
    }
    let fingerprint = params.fingerprint();
    let outcomes: Vec<(f64, bool)> = indices
        .par_iter()
        .map(|&i| {
            let inputs = dataset.inputs(i);
            let label = dataset.instances()[i].label;
            let cache = forward_tagged(params, fingerprint, inputs, inputs.len())?;
            let predicted = decide(cache.probabilities);
            Ok((loss(cache.probabilities, label), predicted == label))
        })
        .collect::<Result<_, RnnError>>()?;
    let n = outcomes.len() as f64;
    let loss_sum: f64 = outcomes.iter().map(|(l, _)| l).sum();
    let correct = outcomes.iter().filter(|(_, ok)| *ok).count() as f64;
    Ok((loss_sum / n, correct / n))
}

fn decide(probabilities: [f64; 2]) -> Label {
    if probabilities[0] >= probabilities[1] {
        Label::Positive
    } else {
        Label::Negative
    }
}

fn metrics_for(
    params: &ModelParams,
    dataset: &Dataset,
    epoch: usize,
    train: &[usize],
    test: &[usize],
) -> Result<EpochMetrics, RnnError> {
    let (train_loss, train_accuracy) = evaluate(params, dataset, train)?;
    let (test_loss, test_accuracy) = evaluate(params, dataset, test)?;
    Ok(EpochMetrics {
        epoch,
        train_loss,
        train_accuracy,
        test_loss,
        test_accuracy,
    })
}

/// Deterministic shuffled split; the test side gets `round(n · fraction)`
/// instances, at least one when the fraction is positive.
fn split(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut n_test = (n as f64 * fraction).round() as usize;
    if fraction > 0.0 {
        n_test = n_test.clamp(1, n - 1);
    }
    let test = order.split_off(n - n_test);
    (order, test)
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainRun, RnnError> {
    train_with_observer(dataset, config, &mut |_| {})
}

/// Trains from a seeded initialisation, reporting each epoch and checkpoint
/// to `observer`. Checkpoints are taken at epoch 0, every
/// `checkpoint_every` epochs and at the final epoch.
pub fn train_with_observer(
    dataset: &Dataset,
    config: &TrainConfig,
    observer: &mut dyn FnMut(TrainEvent<'_>),
) -> Result<TrainRun, RnnError> {
    config.validate()?;
    let [positive, negative] = dataset.class_counts();
    if positive == 0 || negative == 0 {
        return Err(RnnError::SingleClass { positive, negative });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (train_indices, test_indices) = split(dataset.len(), config.test_fraction, &mut rng);
    let shape = config.shape(dataset.input_dim());
    let mut params = ModelParams::init(shape, config.attention_init_scale, &mut rng);
    let mut adam = Adam::new(shape, config.learning_rate);

    let mut run = TrainRun {
        checkpoints: Vec::new(),
        metrics: Vec::with_capacity(config.epochs),
        train_indices,
        test_indices,
    };
    let initial = ModelCheckpoint {
        epoch: 0,
        seed: config.seed,
        metrics: metrics_for(&params, dataset, 0, &run.train_indices, &run.test_indices)?,
        params: params.clone(),
    };
    observer(TrainEvent::Checkpoint(&initial));
    run.checkpoints.push(initial);

    let mut order = run.train_indices.clone();
    let mut last_good = params.clone();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut diverged = false;
        for batch in order.chunks(config.batch_size) {
            let fingerprint = params.fingerprint();
            let (mut grads, loss_sum) = batch_gradient(&params, fingerprint, dataset, batch)?;
            if !loss_sum.is_finite() || !grads.all_finite() {
                diverged = true;
                break;
            }
            grads.scale(1.0 / batch.len() as f64);
            if let Some(clip) = config.clip_norm {
                let norm = grads.l2_norm();
                if norm > clip {
                    grads.scale(clip / norm);
                }
            }
            adam.update(&mut params, &grads);
        }
        let metrics = if diverged || !params.all_finite() {
            None
        } else {
            let m = metrics_for(&params, dataset, epoch, &run.train_indices, &run.test_indices)?;
            m.train_loss.is_finite().then_some(m)
        };
        let Some(metrics) = metrics else {
            log::error!("training diverged at epoch {epoch}");
            let last_metrics = run.metrics.last().copied().unwrap_or(run.checkpoints[0].metrics);
            let last_good = ModelCheckpoint {
                epoch: last_metrics.epoch,
                seed: config.seed,
                metrics: last_metrics,
                params: last_good,
            };
            return Err(RnnError::Diverged {
                epoch,
                last_good: Box::new(last_good),
                run: Box::new(run),
            });
        };
        observer(TrainEvent::Epoch(&metrics));
        run.metrics.push(metrics);
        last_good.clone_from(&params);
        if epoch % config.checkpoint_every == 0 || epoch == config.epochs {
            let checkpoint = ModelCheckpoint {
                epoch,
                seed: config.seed,
                metrics,
                params: params.clone(),
            };
            observer(TrainEvent::Checkpoint(&checkpoint));
            run.checkpoints.push(checkpoint);
        }
    }
    Ok(run)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    /// Probability of the predicted class.
    pub probability: f64,
    /// `[p_pos, p_neg]`.
    pub probabilities: [f64; 2],
}

/// Classifies the first `len` steps of `inputs`. Ties go to the positive class.
pub fn predict(params: &ModelParams, inputs: &[Vec<f64>], len: usize) -> Result<Prediction, RnnError> {
    let cache = forward_tagged(params, 0, inputs, len)?;
    let label = decide(cache.probabilities);
    Ok(Prediction {
        label,
        probability: cache.probabilities[label.index()],
        probabilities: cache.probabilities,
    })
}

/// How softmax attention is rescaled into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionNormalization {
    /// Divide by the instance's own maximum, so its top event scores 1.
    #[default]
    PerInstanceMax,
    /// Divide by the maximum over every event in the dataset.
    GlobalMax,
}

/// Softmax attention of one instance and its normalized form, valid steps only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub id: String,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

pub fn extract_attentions(
    params: &ModelParams,
    dataset: &Dataset,
    normalization: AttentionNormalization,
) -> Result<Vec<AttentionRecord>, RnnError> {
    check_dims(params, dataset)?;
    let raw: Vec<Vec<f64>> = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let inputs = dataset.inputs(i);
            let lstm = super::cell::lstm_forward(&params.lstm, inputs, inputs.len())?;
            Ok(super::cell::attention_forward(&params.attention, &lstm.hiddens)?.weights)
        })
        .collect::<Result<_, RnnError>>()?;
    let global = raw.iter().flatten().copied().fold(0.0, f64::max);
    Ok(raw
        .into_iter()
        .zip(dataset.instances())
        .map(|(weights, inst)| {
            let denom = match normalization {
                AttentionNormalization::PerInstanceMax => weights.iter().copied().fold(0.0, f64::max),
                AttentionNormalization::GlobalMax => global,
            };
            let normalized = weights.iter().map(|w| w / denom).collect();
            AttentionRecord {
                id: inst.id.clone(),
                raw: weights,
                normalized,
            }
        })
        .collect())
}
