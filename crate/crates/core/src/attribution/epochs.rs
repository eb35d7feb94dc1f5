use serde::{Deserialize, Serialize};

use super::slice::{select_events, SliceSpec};
use super::tpartite::{tpartite_classes, GraphVariant, TPartiteGraph};
use super::AttributionError;
use crate::dataset::{Dataset, Label};
use crate::rnn::{extract_attentions, AttentionNormalization, ModelCheckpoint};

pub const LOW_BAND: (f64, f64) = (0.0, 0.2);
pub const HIGH_BAND: (f64, f64) = (0.6, 1.0);

/// Graphs of one attention band at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSummary {
    pub band: (f64, f64),
    pub selected_events: usize,
    /// Edges joining consecutive selected events, per class. Independent of
    /// the attribute a graph is drawn for.
    pub edge_total: [u64; 2],
    /// Single-attribute graphs over both classes, one per slice attribute.
    pub graphs: Vec<TPartiteGraph>,
}

impl BandSummary {
    pub fn edges(&self) -> u64 {
        self.edge_total[0] + self.edge_total[1]
    }

    /// Distinct `(from, to)` edges of each attribute's graph.
    pub fn distinct_edges(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| g.edges.len()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochBands {
    pub epoch: usize,
    pub test_accuracy: f64,
    pub low: BandSummary,
    pub high: BandSummary,
}

/// Recomputes attention at every checkpoint and builds the low- and
/// high-band graphs for each attribute of `slice`. The slice's attention
/// range is replaced by each band in turn.
pub fn epoch_comparison(
    checkpoints: &[ModelCheckpoint],
    dataset: &Dataset,
    slice: &SliceSpec,
    bands: [(f64, f64); 2],
    normalization: AttentionNormalization,
) -> Result<Vec<EpochBands>, AttributionError> {
    if checkpoints.len() < 2 {
        return Err(AttributionError::NotEnoughCheckpoints(checkpoints.len()));
    }
    slice.validate(dataset)?;
    checkpoints
        .iter()
        .map(|ckpt| {
            let records = extract_attentions(&ckpt.params, dataset, normalization)?;
            let summarize = |band: (f64, f64)| -> Result<BandSummary, AttributionError> {
                let banded = slice.clone().with_attention(band.0, band.1);
                let selection = select_events(dataset, &records, &banded)?;
                let graphs = banded
                    .attributes
                    .iter()
                    .map(|&attribute| {
                        tpartite_classes(dataset, &selection, GraphVariant::Single { attribute }, &Label::ALL)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let mut edge_total = [0u64; 2];
                for inst in &selection.instances {
                    edge_total[inst.label.index()] += inst.events.len().saturating_sub(1) as u64;
                }
                Ok(BandSummary {
                    band,
                    selected_events: selection.event_count(),
                    edge_total,
                    graphs,
                })
            };
            Ok(EpochBands {
                epoch: ckpt.epoch,
                test_accuracy: ckpt.test_accuracy(),
                low: summarize(bands[0])?,
                high: summarize(bands[1])?,
            })
        })
        .collect()
}
