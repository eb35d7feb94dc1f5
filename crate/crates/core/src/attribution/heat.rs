use serde::{Deserialize, Serialize};

use super::slice::{Mode, Selection};
use super::AttributionError;
use crate::dataset::{Dataset, Label};

/// How the attention of the events falling in one cell is combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Sum of normalized attention.
    #[default]
    Sum,
    /// Mean normalized attention of the matching events; empty cells are 0.
    Mean,
}

/// Per-cell, per-timestep attention of one class for an attribute pair.
///
/// Cell `(i, j)` holds events whose first attribute is at level `i` and
/// second attribute at level `j`. Storage is cell-major: the series of cell
/// `(i, j)` starts at `(i * cols + j) * span`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSeries {
    pub rows: usize,
    pub cols: usize,
    pub time: (usize, usize),
    pub aggregation: Aggregation,
    sums: Vec<f64>,
    counts: Vec<u64>,
}

impl CellSeries {
    fn zeros(rows: usize, cols: usize, time: (usize, usize), aggregation: Aggregation) -> Self {
        let n = rows * cols * (time.1 + 1 - time.0);
        CellSeries {
            rows,
            cols,
            time,
            aggregation,
            sums: vec![0.0; n],
            counts: vec![0; n],
        }
    }

    pub fn span(&self) -> usize {
        self.time.1 + 1 - self.time.0
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        (i * self.cols + j) * self.span()
    }

    /// Value of cell `(i, j)` at 1-based timestep `t`.
    pub fn at(&self, i: usize, j: usize, t: usize) -> f64 {
        let k = self.offset(i, j) + t - self.time.0;
        match self.aggregation {
            Aggregation::Sum => self.sums[k],
            Aggregation::Mean => mean(self.sums[k], self.counts[k]),
        }
    }

    /// Per-timestep values of cell `(i, j)` over the time range.
    pub fn series(&self, i: usize, j: usize) -> Vec<f64> {
        (self.time.0..=self.time.1).map(|t| self.at(i, j, t)).collect()
    }

    /// Cell value over the whole time range.
    pub fn total(&self, i: usize, j: usize) -> f64 {
        let k = self.offset(i, j);
        let span = self.span();
        let sum: f64 = self.sums[k..k + span].iter().sum();
        match self.aggregation {
            Aggregation::Sum => sum,
            Aggregation::Mean => mean(sum, self.counts[k..k + span].iter().sum()),
        }
    }

    /// Row-major cell totals.
    pub fn totals(&self) -> Vec<f64> {
        self.cells().map(|(i, j)| self.total(i, j)).collect()
    }

    /// Row-major cells, each followed by its series: `rows * cols * span` values.
    pub fn flat_series(&self) -> Vec<f64> {
        self.cells().flat_map(|(i, j)| self.series(i, j)).collect()
    }

    /// Number of selected events that landed in cell `(i, j)`.
    pub fn event_count(&self, i: usize, j: usize) -> u64 {
        let k = self.offset(i, j);
        self.counts[k..k + self.span()].iter().sum()
    }

    fn cells(&self) -> impl Iterator<Item = (usize, usize)> {
        let cols = self.cols;
        (0..self.rows * cols).map(move |c| (c / cols, c % cols))
    }

    fn transpose(&self) -> CellSeries {
        let mut out = CellSeries::zeros(self.cols, self.rows, self.time, self.aggregation);
        let span = self.span();
        for (i, j) in self.cells() {
            let from = self.offset(i, j);
            let to = out.offset(j, i);
            out.sums[to..to + span].copy_from_slice(&self.sums[from..from + span]);
            out.counts[to..to + span].copy_from_slice(&self.counts[from..from + span]);
        }
        out
    }
}

fn mean(sum: f64, count: u64) -> f64 {
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn check_attribute(dataset: &Dataset, attr: usize) -> Result<usize, AttributionError> {
    dataset
        .schema()
        .get(attr)
        .map(|a| a.level_count())
        .ok_or(AttributionError::UnknownAttribute(attr))
}

/// Per-timestep heat of one class for attribute pair `(p, q)`, with the
/// default sum aggregation.
pub fn heat_series(
    dataset: &Dataset,
    selection: &Selection,
    p: usize,
    q: usize,
    class: Label,
) -> Result<CellSeries, AttributionError> {
    accumulate(dataset, selection, p, q, Aggregation::Sum).map(|[pos, neg]| match class {
        Label::Positive => pos,
        Label::Negative => neg,
    })
}

fn accumulate(
    dataset: &Dataset,
    selection: &Selection,
    p: usize,
    q: usize,
    aggregation: Aggregation,
) -> Result<[CellSeries; 2], AttributionError> {
    let rows = check_attribute(dataset, p)?;
    let cols = check_attribute(dataset, q)?;
    let mut out = [
        CellSeries::zeros(rows, cols, selection.time, aggregation),
        CellSeries::zeros(rows, cols, selection.time, aggregation),
    ];
    for inst in &selection.instances {
        let target = &mut out[inst.label.index()];
        for e in &inst.events {
            let levels = dataset.levels(inst.instance, e.t - 1);
            let k = target.offset(levels[p], levels[q]) + e.t - selection.time.0;
            target.sums[k] += e.weight;
            target.counts[k] += 1;
        }
    }
    Ok(out)
}

/// Heat of both classes for one attribute pair.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMatrix {
    pub p: usize,
    pub q: usize,
    pub positive: CellSeries,
    pub negative: CellSeries,
}

impl HeatMatrix {
    pub fn compute(
        dataset: &Dataset,
        selection: &Selection,
        p: usize,
        q: usize,
        aggregation: Aggregation,
    ) -> Result<Self, AttributionError> {
        let [positive, negative] = accumulate(dataset, selection, p, q, aggregation)?;
        Ok(HeatMatrix {
            p,
            q,
            positive,
            negative,
        })
    }

    pub fn rows(&self) -> usize {
        self.positive.rows
    }

    pub fn cols(&self) -> usize {
        self.positive.cols
    }

    pub fn class(&self, class: Label) -> &CellSeries {
        match class {
            Label::Positive => &self.positive,
            Label::Negative => &self.negative,
        }
    }

    /// The matrix of pair `(q, p)`.
    pub fn transpose(&self) -> HeatMatrix {
        HeatMatrix {
            p: self.q,
            q: self.p,
            positive: self.positive.transpose(),
            negative: self.negative.transpose(),
        }
    }

    pub fn variance(&self) -> VarianceMatrix {
        VarianceMatrix {
            p: self.p,
            q: self.q,
            rows: self.rows(),
            cols: self.cols(),
            positive: temporal_variance(&self.positive),
            negative: temporal_variance(&self.negative),
        }
    }
}

/// Row-major cell values of a matrix under a display mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixValues {
    /// Positive mode: `+pos`; negative mode: `-neg`; difference: `pos - neg`.
    Signed(Vec<f64>),
    /// Both mode: the class values untouched.
    Pair { pos: Vec<f64>, neg: Vec<f64> },
}

impl MatrixValues {
    fn from_classes(pos: Vec<f64>, neg: Vec<f64>, mode: Mode) -> Self {
        match mode {
            Mode::Positive => MatrixValues::Signed(pos),
            Mode::Negative => MatrixValues::Signed(neg.into_iter().map(|v| -v).collect()),
            Mode::Difference => MatrixValues::Signed(pos.iter().zip(&neg).map(|(a, b)| a - b).collect()),
            Mode::Both => MatrixValues::Pair { pos, neg },
        }
    }

    pub fn max_abs(&self) -> f64 {
        let fold = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        match self {
            MatrixValues::Signed(v) => fold(v),
            MatrixValues::Pair { pos, neg } => fold(pos).max(fold(neg)),
        }
    }

    /// Log-scaled intensities against a shared `max_abs`.
    pub fn display(&self, max_abs: f64) -> MatrixValues {
        let scale = |v: &[f64]| v.iter().map(|x| log_scale(*x, max_abs)).collect();
        match self {
            MatrixValues::Signed(v) => MatrixValues::Signed(scale(v)),
            MatrixValues::Pair { pos, neg } => MatrixValues::Pair {
                pos: scale(pos),
                neg: scale(neg),
            },
        }
    }
}

/// Cell totals over the time range, combined according to `mode`.
pub fn heat_matrix(matrix: &HeatMatrix, mode: Mode) -> MatrixValues {
    MatrixValues::from_classes(matrix.positive.totals(), matrix.negative.totals(), mode)
}

/// Population variance over the time range of every cell's series,
/// row-major. Two-pass: mean first, then mean squared deviation.
pub fn temporal_variance(series: &CellSeries) -> Vec<f64> {
    let span = series.span() as f64;
    series
        .cells()
        .map(|(i, j)| {
            let values = series.series(i, j);
            let mean = values.iter().sum::<f64>() / span;
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / span
        })
        .collect()
}

/// Temporal variance of both classes for one attribute pair.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceMatrix {
    pub p: usize,
    pub q: usize,
    pub rows: usize,
    pub cols: usize,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

impl VarianceMatrix {
    /// Same sign convention as [`heat_matrix`]; difference is `var_pos - var_neg`.
    pub fn values(&self, mode: Mode) -> MatrixValues {
        MatrixValues::from_classes(self.positive.clone(), self.negative.clone(), mode)
    }
}

/// Signed log intensity in `[-1, 1]`: `sign(v) ln(1 + |v|) / ln(1 + max_abs)`.
pub fn log_scale(value: f64, max_abs: f64) -> f64 {
    if max_abs <= 0.0 || value == 0.0 {
        return 0.0;
    }
    let v = (value.abs().ln_1p() / max_abs.ln_1p()).min(1.0);
    v.copysign(value)
}
