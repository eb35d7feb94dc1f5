use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::slice::Selection;
use super::AttributionError;
use crate::dataset::{Dataset, Label};

/// Sagitta of a curved same-position edge per timestep of distance, in units
/// of the horizontal gap between adjacent axes.
pub const CURVE_BOW_PER_STEP: f64 = 0.15;

/// Vertical extent of graph layouts; positions are in `(0, 1)`.
const LAYOUT_HEIGHT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphVariant {
    Single { attribute: usize },
    Combined { primary: usize, secondary: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub t: usize,
    /// Vertical slot on the axis: the level, or `primary * n_secondary + secondary`.
    pub position: usize,
    /// One level per attribute of the variant.
    pub levels: Vec<usize>,
    pub y: f64,
    /// Event counts, indexed by [`Label::index`].
    pub frequency: [u64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    /// `(t, position)` endpoints with `from.0 < to.0`.
    pub from: (usize, usize),
    pub to: (usize, usize),
    pub frequency: [u64; 2],
    /// Both endpoints share a vertical position, so a straight segment would
    /// run along the axis row; drawn as a curve with sagitta `bow`.
    pub curved: bool,
    pub bow: f64,
}

impl Edge {
    pub fn total(&self) -> u64 {
        self.frequency[0] + self.frequency[1]
    }
}

/// Timestep-partitioned node and edge frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TPartiteGraph {
    pub variant: GraphVariant,
    /// Classes whose events were counted.
    pub classes: Vec<Label>,
    /// One axis per timestep of the time range.
    pub axes: Vec<usize>,
    /// Vertical coordinate of each position, shared by all axes.
    pub layout: Vec<f64>,
    /// Sorted by `(t, position)`.
    pub nodes: Vec<Node>,
    /// Sorted ascending by total frequency, ties by endpoints, so that
    /// frequent edges are drawn last.
    pub edges: Vec<Edge>,
    pub max_node_frequency: u64,
    pub max_edge_frequency: u64,
}

impl TPartiteGraph {
    pub fn edge_total(&self, class: Label) -> u64 {
        self.edges.iter().map(|e| e.frequency[class.index()]).sum()
    }

    pub fn node_total(&self, class: Label) -> u64 {
        self.nodes.iter().map(|n| n.frequency[class.index()]).sum()
    }

    pub fn node(&self, t: usize, position: usize) -> Option<&Node> {
        self.nodes
            .binary_search_by(|n| (n.t, n.position).cmp(&(t, position)))
            .ok()
            .map(|i| &self.nodes[i])
    }

    pub fn edge(&self, from: (usize, usize), to: (usize, usize)) -> Option<&Edge> {
        self.edges.iter().find(|e| e.from == from && e.to == to)
    }
}

/// Vertical coordinates of `n_primary * n_secondary` positions: equal-height
/// groups top-down by primary level, secondary levels evenly spaced within
/// each group. Position `g * n_secondary + j` sits at
/// `(g * n_secondary + j + 0.5) * height / (n_primary * n_secondary)`.
///
/// # Panics
///
/// If either level count is zero or `height` is not positive.
pub fn layout_combined(n_primary: usize, n_secondary: usize, height: f64) -> Vec<f64> {
    assert!(n_primary >= 1 && n_secondary >= 1, "level counts must be positive");
    assert!(height > 0.0, "layout height must be positive");
    let n = n_primary * n_secondary;
    let slot = height / n as f64;
    (0..n).map(|k| (k as f64 + 0.5) * slot).collect()
}

/// Graph of one attribute's levels for the events of one class.
pub fn tpartite_single(
    dataset: &Dataset,
    selection: &Selection,
    attribute: usize,
    class: Label,
) -> Result<TPartiteGraph, AttributionError> {
    tpartite_classes(dataset, selection, GraphVariant::Single { attribute }, &[class])
}

/// Graph of primary-secondary level combinations, both classes.
pub fn tpartite_combined(
    dataset: &Dataset,
    selection: &Selection,
    primary: usize,
    secondary: usize,
) -> Result<TPartiteGraph, AttributionError> {
    if primary == secondary {
        return Err(AttributionError::SameAttribute(primary));
    }
    tpartite_classes(
        dataset,
        selection,
        GraphVariant::Combined { primary, secondary },
        &Label::ALL,
    )
}

/// Graph of any variant counting only the events of `classes`.
pub fn tpartite_classes(
    dataset: &Dataset,
    selection: &Selection,
    variant: GraphVariant,
    classes: &[Label],
) -> Result<TPartiteGraph, AttributionError> {
    let level_count = |a: usize| {
        dataset
            .schema()
            .get(a)
            .map(|s| s.level_count())
            .ok_or(AttributionError::UnknownAttribute(a))
    };
    let (attrs, layout) = match variant {
        GraphVariant::Single { attribute } => (
            vec![attribute],
            layout_combined(1, level_count(attribute)?, LAYOUT_HEIGHT),
        ),
        GraphVariant::Combined { primary, secondary } => {
            if primary == secondary {
                return Err(AttributionError::SameAttribute(primary));
            }
            (
                vec![primary, secondary],
                layout_combined(level_count(primary)?, level_count(secondary)?, LAYOUT_HEIGHT),
            )
        }
    };
    let n_secondary = level_count(*attrs.last().expect("variant has an attribute"))?;
    let position = |levels: &[usize]| match variant {
        GraphVariant::Single { attribute } => levels[attribute],
        GraphVariant::Combined { primary, secondary } => levels[primary] * n_secondary + levels[secondary],
    };

    let mut nodes: BTreeMap<(usize, usize), [u64; 2]> = BTreeMap::new();
    let mut edges: BTreeMap<((usize, usize), (usize, usize)), [u64; 2]> = BTreeMap::new();
    for inst in selection.instances.iter().filter(|s| classes.contains(&s.label)) {
        let c = inst.label.index();
        let mut previous = None;
        for e in &inst.events {
            let key = (e.t, position(dataset.levels(inst.instance, e.t - 1)));
            nodes.entry(key).or_default()[c] += 1;
            if let Some(prev) = previous {
                edges.entry((prev, key)).or_default()[c] += 1;
            }
            previous = Some(key);
        }
    }

    let nodes: Vec<Node> = nodes
        .into_iter()
        .map(|((t, pos), frequency)| Node {
            t,
            position: pos,
            levels: match variant {
                GraphVariant::Single { .. } => vec![pos],
                GraphVariant::Combined { .. } => vec![pos / n_secondary, pos % n_secondary],
            },
            y: layout[pos],
            frequency,
        })
        .collect();
    let mut edges: Vec<Edge> = edges
        .into_iter()
        .map(|((from, to), frequency)| {
            let curved = from.1 == to.1;
            Edge {
                from,
                to,
                frequency,
                curved,
                bow: if curved {
                    CURVE_BOW_PER_STEP * (to.0 - from.0) as f64
                } else {
                    0.0
                },
            }
        })
        .collect();
    // Stable: equal totals keep endpoint order.
    edges.sort_by_key(Edge::total);

    let max_of = |it: &mut dyn Iterator<Item = [u64; 2]>| it.flat_map(|f| f.into_iter()).max().unwrap_or(0);
    Ok(TPartiteGraph {
        variant,
        classes: classes.to_vec(),
        axes: (selection.time.0..=selection.time.1).collect(),
        max_node_frequency: max_of(&mut nodes.iter().map(|n| n.frequency)),
        max_edge_frequency: max_of(&mut edges.iter().map(|e| e.frequency)),
        layout,
        nodes,
        edges,
    })
}
