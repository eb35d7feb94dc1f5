//! Versioned JSON documents for grids, T-partite graphs and epoch
//! comparisons.
//!
//! Every document carries `"v": 1`. Attributes are referenced by schema
//! index and described once in an `attributes` table; level labels come from
//! the schema. Key order is fixed, so equal inputs serialize to equal bytes.

use serde_json::{json, Map, Value};

use crate::attribution::{EpochBands, GraphVariant, MatrixGrid, MatrixValues, SliceSpec, TPartiteGraph};
use crate::dataset::{Dataset, Label};

pub const EXPORT_VERSION: u32 = 1;

fn attribute(dataset: &Dataset, index: usize) -> Value {
    let a = &dataset.schema()[index];
    json!({
        "index": index,
        "name": a.name,
        "kind": a.kind,
        "levels": a.levels,
    })
}

pub fn slice_json(slice: &SliceSpec, dataset: &Dataset) -> Value {
    let names: Vec<&str> = slice
        .attributes
        .iter()
        .map(|&a| dataset.schema()[a].name.as_str())
        .collect();
    let mut out = json!({
        "attention": [slice.attention.0, slice.attention.1],
        "time": [slice.time.0, slice.time.1],
        "attributes": names,
        "mode": slice.mode.as_str(),
    });
    if let Some(epoch) = slice.epoch {
        out["epoch"] = json!(epoch);
    }
    out
}

fn values_json(values: &MatrixValues) -> Value {
    match values {
        MatrixValues::Signed(v) => json!(v),
        MatrixValues::Pair { pos, neg } => json!({"pos": pos, "neg": neg}),
    }
}

/// `{v, slice, aggregation, attributes, scale, matrices}`; each matrix
/// carries per-class cell values (`pos`, `neg`), the mode `value`, its
/// log-scaled `display`, and for heat and diagonal blocks the per-class
/// `series` (one array of `|T_range|` values per cell, row-major).
pub fn grid_json(grid: &MatrixGrid, dataset: &Dataset) -> Value {
    let span = grid.slice.span();
    let matrices: Vec<Value> = grid
        .blocks
        .iter()
        .map(|b| {
            let series = match &b.series {
                Some([pos, neg]) => json!({
                    "pos": pos.chunks(span).collect::<Vec<_>>(),
                    "neg": neg.chunks(span).collect::<Vec<_>>(),
                }),
                None => Value::Null,
            };
            json!({
                "col": b.col,
                "row": b.row,
                "p": b.p,
                "q": b.q,
                "kind": b.kind,
                "rows": dataset.schema()[b.p].levels,
                "cols": dataset.schema()[b.q].levels,
                "pos": b.positive,
                "neg": b.negative,
                "value": values_json(&b.values),
                "display": values_json(&grid.display(b)),
                "series": series,
            })
        })
        .collect();
    json!({
        "v": EXPORT_VERSION,
        "slice": slice_json(&grid.slice, dataset),
        "aggregation": grid.aggregation,
        "selected_events": grid.selected_events,
        "attributes": grid.slice.attributes.iter().map(|&a| attribute(dataset, a)).collect::<Vec<_>>(),
        "scale": {"heat": grid.heat_scale(), "variance": grid.variance_scale()},
        "matrices": matrices,
    })
}

/// One graph: `{variant, attributes, classes, axes, layout, nodes, edges, ...}`.
pub fn graph_json(graph: &TPartiteGraph, dataset: &Dataset) -> Value {
    let attrs: Vec<usize> = match graph.variant {
        GraphVariant::Single { attribute } => vec![attribute],
        GraphVariant::Combined { primary, secondary } => vec![primary, secondary],
    };
    let nodes: Vec<Value> = graph
        .nodes
        .iter()
        .map(|n| {
            let labels: Vec<&str> = n
                .levels
                .iter()
                .zip(&attrs)
                .map(|(&l, &a)| dataset.schema()[a].levels[l].as_str())
                .collect();
            json!({
                "t": n.t,
                "pos": n.position,
                "levels": n.levels,
                "labels": labels,
                "y": n.y,
                "freq_pos": n.frequency[0],
                "freq_neg": n.frequency[1],
            })
        })
        .collect();
    let edges: Vec<Value> = graph
        .edges
        .iter()
        .map(|e| {
            json!({
                "from": [e.from.0, e.from.1],
                "to": [e.to.0, e.to.1],
                "freq_pos": e.frequency[0],
                "freq_neg": e.frequency[1],
                "curved": e.curved,
                "bow": e.bow,
            })
        })
        .collect();
    json!({
        "variant": match graph.variant {
            GraphVariant::Single { .. } => "single",
            GraphVariant::Combined { .. } => "combined",
        },
        "attributes": attrs.iter().map(|&a| attribute(dataset, a)).collect::<Vec<_>>(),
        "classes": graph.classes.iter().map(|c| c.as_str()).collect::<Vec<_>>(),
        "axes": graph.axes,
        "layout": graph.layout,
        "max_node_freq": graph.max_node_frequency,
        "max_edge_freq": graph.max_edge_frequency,
        "nodes": nodes,
        "edges": edges,
    })
}

/// `{v, slice, variant, graphs}`: a single attribute yields one graph per
/// class side by side, a pair yields one combined graph.
pub fn tpartite_json(graphs: &[TPartiteGraph], slice: &SliceSpec, dataset: &Dataset) -> Value {
    let variant = match graphs.first().map(|g| g.variant) {
        Some(GraphVariant::Combined { .. }) => "combined",
        _ => "single",
    };
    json!({
        "v": EXPORT_VERSION,
        "slice": slice_json(slice, dataset),
        "variant": variant,
        "graphs": graphs.iter().map(|g| graph_json(g, dataset)).collect::<Vec<_>>(),
    })
}

/// Band summary per checkpoint; graphs are summarized, not embedded.
pub fn epochs_json(epochs: &[EpochBands], slice: &SliceSpec, dataset: &Dataset) -> Value {
    let band = |b: &crate::attribution::BandSummary| {
        let mut distinct = Map::new();
        for (g, n) in b.graphs.iter().zip(b.distinct_edges()) {
            if let GraphVariant::Single { attribute } = g.variant {
                distinct.insert(dataset.schema()[attribute].name.clone(), json!(n));
            }
        }
        json!({
            "band": [b.band.0, b.band.1],
            "selected_events": b.selected_events,
            "edges": b.edges(),
            "edges_pos": b.edge_total[Label::Positive.index()],
            "edges_neg": b.edge_total[Label::Negative.index()],
            "distinct_edges": distinct,
        })
    };
    json!({
        "v": EXPORT_VERSION,
        "slice": slice_json(slice, dataset),
        "epochs": epochs.iter().map(|e| json!({
            "epoch": e.epoch,
            "test_accuracy": e.test_accuracy,
            "low": band(&e.low),
            "high": band(&e.high),
        })).collect::<Vec<_>>(),
    })
}

/// Pretty JSON with a trailing newline.
pub fn to_pretty(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("JSON values always serialize");
    s.push('\n');
    s
}
