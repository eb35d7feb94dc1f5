//! Attention-LSTM training on labeled event sequences and aggregation of the
//! learned per-event attention into value-level attribution views.

pub mod attribution;
pub mod dataset;
pub mod export;
pub mod rnn;
pub mod svg;
pub mod synth;
