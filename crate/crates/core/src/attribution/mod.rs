//! Aggregation of normalized per-event attention into value-level views.
//!
//! A [`SliceSpec`] filters events by normalized attention, timestep range and
//! attribute subset. From the selected events this module builds
//!
//! * heat matrices: per attribute pair and value-level cell, the attention
//!   mass of each class, per timestep and summed over the time range;
//! * temporal variance matrices: the population variance of those per-step
//!   series;
//! * the matrix grid: heat in the lower triangle, variance in the upper
//!   triangle, single-attribute matrices on the diagonal;
//! * T-partite graphs: timestep-partitioned nodes and the edges joining
//!   consecutive selected events of each instance.
//!
//! All aggregation is `f64`, summed in instance order then timestep order.

mod epochs;
mod grid;
mod heat;
mod slice;
mod tpartite;

pub use epochs::{epoch_comparison, BandSummary, EpochBands, HIGH_BAND, LOW_BAND};
pub use grid::{build_grid, BlockKind, GridBlock, GridOptions, MatrixGrid};
pub use heat::{
    heat_matrix, heat_series, log_scale, temporal_variance, Aggregation, CellSeries, HeatMatrix, MatrixValues,
    VarianceMatrix,
};
pub use slice::{select_events, InstanceSelection, Mode, SelectedEvent, Selection, SliceSpec};
pub use tpartite::{
    layout_combined, tpartite_classes, tpartite_combined, tpartite_single, Edge, GraphVariant, Node, TPartiteGraph,
    CURVE_BOW_PER_STEP,
};

use crate::rnn::RnnError;

#[derive(Debug, thiserror::Error)]
pub enum AttributionError {
    #[error("invalid slice: {0}")]
    InvalidSlice(String),
    #[error("attribute index {0} is out of range")]
    UnknownAttribute(usize),
    #[error("primary and secondary attribute are both {0}; use the single-attribute graph instead")]
    SameAttribute(usize),
    #[error("attention records do not match the dataset: {0}")]
    AttentionMismatch(String),
    #[error("epoch comparison needs at least two checkpoints, got {0}")]
    NotEnoughCheckpoints(usize),
    #[error(transparent)]
    Model(#[from] RnnError),
}
