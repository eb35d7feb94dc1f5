//! Naive reference implementations of the attribution aggregates, plus a
//! generator of small random datasets with attention records.
//!
//! Everything here works from raw event strings and attention records
//! directly, without the selection, level cache or grid machinery.

#![allow(dead_code)]

use std::collections::HashMap;

use attnmap_core::attribution::{Mode, SliceSpec};
use attnmap_core::dataset::{AttributeKind, AttributeSchema, Dataset, Event, Label, SequenceInstance};
use attnmap_core::rnn::AttentionRecord;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Case {
    pub dataset: Dataset,
    pub records: Vec<AttentionRecord>,
}

/// Level of a raw value by linear scan.
pub fn level_of(attr: &AttributeSchema, raw: &str) -> usize {
    match attr.kind {
        AttributeKind::Numerical => {
            let v: f64 = raw.parse().unwrap();
            let interior = &attr.bin_edges[1..attr.bin_edges.len() - 1];
            interior.iter().filter(|e| **e <= v).count()
        }
        _ => attr.levels.iter().position(|l| l == raw).unwrap(),
    }
}

/// Random dataset of at most `max_instances` instances with per-event
/// normalized attention, including exact band boundaries.
pub fn random_case(seed: u64, max_instances: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attrs = rng.random_range(1..=4);
    let max_len = rng.random_range(1..=6);
    let schema: Vec<AttributeSchema> = (0..attrs)
        .map(|a| {
            let levels = rng.random_range(1..=5);
            if rng.random_bool(0.3) {
                let edges = (0..=levels).map(|k| k as f64 * 10.0).collect();
                AttributeSchema::numerical(format!("n{a}"), edges).unwrap()
            } else {
                AttributeSchema::categorical(format!("c{a}"), (0..levels).map(|k| format!("v{k}")).collect()).unwrap()
            }
        })
        .collect();
    let n = rng.random_range(1..=max_instances);
    let instances: Vec<SequenceInstance> = (0..n)
        .map(|i| {
            let len = rng.random_range(1..=max_len);
            let events = (0..len)
                .map(|_| {
                    Event::new(schema.iter().map(|attr| {
                        let k = rng.random_range(0..attr.level_count());
                        match attr.kind {
                            AttributeKind::Numerical => format!("{}", k as f64 * 10.0 + rng.random_range(0.0..10.0)),
                            _ => attr.levels[k].clone(),
                        }
                    }))
                })
                .collect();
            SequenceInstance {
                id: format!("i{i:02}"),
                label: if rng.random_bool(0.5) {
                    Label::Positive
                } else {
                    Label::Negative
                },
                events,
            }
        })
        .collect();
    let dataset = Dataset::new(schema, instances).unwrap();
    let records = dataset
        .instances()
        .iter()
        .map(|inst| {
            let normalized: Vec<f64> = (0..inst.len())
                .map(|_| match rng.random_range(0..6) {
                    0 => 0.2,
                    1 => 0.6,
                    2 => 1.0,
                    _ => rng.random_range(0.0..1.0),
                })
                .collect();
            AttentionRecord {
                id: inst.id.clone(),
                raw: normalized.clone(),
                normalized,
            }
        })
        .collect();
    Case { dataset, records }
}

/// Random valid slice over the case's dataset.
pub fn random_slice(case: &Case, seed: u64) -> SliceSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound =
        |rng: &mut ChaCha8Rng| -> f64 { [0.0, 0.2, 0.6, 1.0, rng.random_range(0.0..1.0)][rng.random_range(0..5)] };
    let (a, b) = (bound(&mut rng), bound(&mut rng));
    let max = case.dataset.max_len();
    let t0 = rng.random_range(1..=max);
    let t1 = rng.random_range(t0..=max);
    let mut attrs: Vec<usize> = (0..case.dataset.schema().len()).collect();
    attrs.shuffle(&mut rng);
    attrs.truncate(rng.random_range(1..=attrs.len()));
    SliceSpec {
        attention: (a.min(b), a.max(b)),
        time: (t0, t1),
        attributes: attrs,
        mode: [Mode::Positive, Mode::Negative, Mode::Both, Mode::Difference][rng.random_range(0..4)],
        epoch: None,
    }
}

fn selected(slice: &SliceSpec, t: usize, weight: f64) -> bool {
    t >= slice.time.0 && t <= slice.time.1 && weight >= slice.attention.0 && weight <= slice.attention.1
}

/// heat[i][j][t - t0] for one class, by looping cells × timesteps × instances × events.
pub fn heat(case: &Case, slice: &SliceSpec, p: usize, q: usize, class: Label) -> Vec<Vec<Vec<f64>>> {
    let schema = case.dataset.schema();
    let (rows, cols) = (schema[p].level_count(), schema[q].level_count());
    let mut out = vec![vec![vec![0.0; slice.time.1 + 1 - slice.time.0]; cols]; rows];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            for t in slice.time.0..=slice.time.1 {
                let mut sum = 0.0;
                for (inst, rec) in case.dataset.instances().iter().zip(&case.records) {
                    if inst.label != class {
                        continue;
                    }
                    for (s, event) in inst.events.iter().enumerate() {
                        if s + 1 == t
                            && selected(slice, t, rec.normalized[s])
                            && level_of(&schema[p], &event.values[p]) == i
                            && level_of(&schema[q], &event.values[q]) == j
                        {
                            sum += rec.normalized[s];
                        }
                    }
                }
                cell[t - slice.time.0] = sum;
            }
        }
    }
    out
}

/// Population variance by the direct definition.
pub fn variance(series: &[f64]) -> f64 {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    series.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / n
}

pub type NodeCounts = HashMap<(usize, usize), [u64; 2]>;
pub type EdgeCounts = HashMap<((usize, usize), (usize, usize)), [u64; 2]>;

/// Node and edge counts with position computed by `position(levels of the event)`.
pub fn graph(case: &Case, slice: &SliceSpec, position: impl Fn(&[usize]) -> usize) -> (NodeCounts, EdgeCounts) {
    let schema = case.dataset.schema();
    let mut nodes = NodeCounts::new();
    let mut edges = EdgeCounts::new();
    for (inst, rec) in case.dataset.instances().iter().zip(&case.records) {
        let c = inst.label.index();
        let mut chain = Vec::new();
        for (s, event) in inst.events.iter().enumerate() {
            if selected(slice, s + 1, rec.normalized[s]) {
                let levels: Vec<usize> = schema.iter().zip(&event.values).map(|(a, v)| level_of(a, v)).collect();
                chain.push((s + 1, position(&levels)));
            }
        }
        for node in &chain {
            nodes.entry(*node).or_default()[c] += 1;
        }
        for pair in chain.windows(2) {
            edges.entry((pair[0], pair[1])).or_default()[c] += 1;
        }
    }
    (nodes, edges)
}

/// Selected attention mass per class.
pub fn mass(case: &Case, slice: &SliceSpec) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (inst, rec) in case.dataset.instances().iter().zip(&case.records) {
        for (s, w) in rec.normalized.iter().enumerate() {
            if selected(slice, s + 1, *w) {
                out[inst.label.index()] += w;
            }
        }
    }
    out
}

/// Largest absolute discrepancy between the library and the naive reference
/// over every heat series, heat total, variance and graph frequency that the
/// slice produces. Structural mismatches are reported as errors.
pub fn discrepancy(case: &Case, slice: &SliceSpec) -> Result<f64, String> {
    use attnmap_core::attribution::{
        build_grid, select_events, tpartite_combined, tpartite_single, BlockKind, GridOptions, TPartiteGraph,
    };

    let ds = &case.dataset;
    let schema = ds.schema();
    let grid = build_grid(ds, &case.records, slice, &GridOptions::default()).map_err(|e| e.to_string())?;
    let selection = select_events(ds, &case.records, slice).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut diff = |a: f64, b: f64| worst = worst.max((a - b).abs());

    for block in &grid.blocks {
        let naive = [Label::Positive, Label::Negative].map(|c| heat(case, slice, block.p, block.q, c));
        let cols = schema[block.q].level_count();
        if block.rows != schema[block.p].level_count() || block.cols != cols {
            return Err(format!("block ({}, {}) has wrong dimensions", block.col, block.row));
        }
        for (c, cells) in naive.iter().enumerate() {
            let values = if c == 0 { &block.positive } else { &block.negative };
            for i in 0..block.rows {
                for j in 0..cols {
                    let reference = match block.kind {
                        BlockKind::Variance => variance(&cells[i][j]),
                        _ => cells[i][j].iter().sum(),
                    };
                    diff(values[i * cols + j], reference);
                    if let Some(series) = &block.series {
                        let span = cells[i][j].len();
                        let start = (i * cols + j) * span;
                        for (a, b) in series[c][start..start + span].iter().zip(&cells[i][j]) {
                            diff(*a, *b);
                        }
                    }
                }
            }
        }
    }

    let compare = |g: &TPartiteGraph, nodes: &NodeCounts, edges: &EdgeCounts, classes: &[Label]| {
        let mask = |f: [u64; 2]| {
            let mut out = [0u64; 2];
            for c in classes {
                out[c.index()] = f[c.index()];
            }
            out
        };
        let expected_nodes: HashMap<_, _> = nodes
            .iter()
            .map(|(k, f)| (*k, mask(*f)))
            .filter(|(_, f)| f[0] + f[1] > 0)
            .collect();
        let expected_edges: HashMap<_, _> = edges
            .iter()
            .map(|(k, f)| (*k, mask(*f)))
            .filter(|(_, f)| f[0] + f[1] > 0)
            .collect();
        let got_nodes: HashMap<_, _> = g.nodes.iter().map(|n| ((n.t, n.position), n.frequency)).collect();
        let got_edges: HashMap<_, _> = g.edges.iter().map(|e| ((e.from, e.to), e.frequency)).collect();
        if got_nodes != expected_nodes || got_edges != expected_edges {
            return Err(format!("graph {:?} frequencies differ from the reference", g.variant));
        }
        Ok(())
    };

    for &a in &slice.attributes {
        let (nodes, edges) = graph(case, slice, |levels| levels[a]);
        for class in [Label::Positive, Label::Negative] {
            let g = tpartite_single(ds, &selection, a, class).map_err(|e| e.to_string())?;
            compare(&g, &nodes, &edges, &[class])?;
        }
        for &b in slice.attributes.iter().filter(|b| **b != a) {
            let n_b = schema[b].level_count();
            let (nodes, edges) = graph(case, slice, |levels| levels[a] * n_b + levels[b]);
            let g = tpartite_combined(ds, &selection, a, b).map_err(|e| e.to_string())?;
            compare(&g, &nodes, &edges, &[Label::Positive, Label::Negative])?;
        }
    }
    Ok(worst)
}
