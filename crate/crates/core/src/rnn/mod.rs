//! Attention-equipped LSTM binary classifier.
//!
//! The model runs an LSTM over the encoded events of a sequence, pools the
//! hidden states with additive attention into a context vector, and feeds
//! the context to a two-way softmax. Training minimises cross-entropy with
//! Adam and emits epoch-indexed checkpoints; the per-event attention weights
//! of any checkpoint can be extracted and normalized for attribution.

mod cell;
mod checkpoint;
mod params;
mod train;

use std::path::PathBuf;

pub use cell::{
    attention_forward, backward, classify, forward, loss, lstm_forward, softmax, AttentionTrace, ForwardCache,
    LstmTrace, LOSS_EPSILON,
};
pub use checkpoint::{
    checkpoint_path, list_checkpoints, load_checkpoint, save_checkpoint, write_atomic, ModelCheckpoint,
    CHECKPOINT_VERSION,
};
pub use params::{
    AttentionParams, ClassifierParams, Gradients, LstmParams, ModelParams, ModelShape, GATE_ORDER, TENSOR_NAMES,
};
pub use train::{
    evaluate, extract_attentions, predict, train, train_with_observer, Adam, AttentionNormalization, AttentionRecord,
    EpochMetrics, Prediction, TrainConfig, TrainEvent, TrainRun,
};

#[derive(Debug, thiserror::Error)]
pub enum RnnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("sequence has no valid steps")]
    EmptySequence,
    #[error("forward cache was produced by different parameters")]
    StaleCache,
    #[error("parameters contain non-finite values")]
    NonFinite,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("training needs instances of both classes (positive: {positive}, negative: {negative})")]
    SingleClass { positive: usize, negative: usize },
    #[error("training diverged at epoch {epoch}; last good parameters are from epoch {}", last_good.epoch)]
    Diverged {
        epoch: usize,
        last_good: Box<ModelCheckpoint>,
        run: Box<TrainRun>,
    },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
