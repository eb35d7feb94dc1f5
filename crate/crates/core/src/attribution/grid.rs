use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::heat::{heat_matrix, Aggregation, HeatMatrix, MatrixValues};
use super::slice::{select_events, Selection, SliceSpec};
use super::AttributionError;
use crate::dataset::Dataset;
use crate::rnn::AttentionRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Heat,
    Variance,
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GridOptions {
    pub aggregation: Aggregation,
}

/// One matrix of the grid.
///
/// `col` and `row` are positions in the slice's attribute list. Rows of the
/// matrix are levels of attribute `p`, columns are levels of attribute `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridBlock {
    pub col: usize,
    pub row: usize,
    pub kind: BlockKind,
    pub p: usize,
    pub q: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major per-class cell values: heat totals, or variances.
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    /// Heat and diagonal blocks: per-class series, `rows * cols * span` values.
    pub series: Option<[Vec<f64>; 2]>,
    /// Cell values under the slice's mode.
    pub values: MatrixValues,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixGrid {
    pub slice: SliceSpec,
    pub aggregation: Aggregation,
    /// Ordered by `(row, col)`.
    pub blocks: Vec<GridBlock>,
    pub selected_events: usize,
}

impl MatrixGrid {
    pub fn size(&self) -> usize {
        self.slice.attributes.len()
    }

    pub fn block(&self, col: usize, row: usize) -> Option<&GridBlock> {
        let n = self.size();
        (col < n && row < n).then(|| &self.blocks[row * n + col])
    }

    pub fn count(&self, kind: BlockKind) -> usize {
        self.blocks.iter().filter(|b| b.kind == kind).count()
    }

    /// Largest absolute mode value over heat and diagonal blocks, which
    /// share one colormap.
    pub fn heat_scale(&self) -> f64 {
        self.scale(|k| k != BlockKind::Variance)
    }

    pub fn variance_scale(&self) -> f64 {
        self.scale(|k| k == BlockKind::Variance)
    }

    fn scale(&self, keep: impl Fn(BlockKind) -> bool) -> f64 {
        self.blocks
            .iter()
            .filter(|b| keep(b.kind))
            .fold(0.0, |m, b| m.max(b.values.max_abs()))
    }

    /// Log-scaled display intensities of one block.
    pub fn display(&self, block: &GridBlock) -> MatrixValues {
        let scale = match block.kind {
            BlockKind::Variance => self.variance_scale(),
            _ => self.heat_scale(),
        };
        block.values.display(scale)
    }
}

/// Builds the matrix grid for the slice's ordered attribute list: heat of
/// pair `(a_c, a_r)` below the diagonal (`c < r`), its temporal variance at
/// the mirrored position above, and the matrix of `a_c` with itself on the
/// diagonal.
pub fn build_grid(
    dataset: &Dataset,
    records: &[AttentionRecord],
    slice: &SliceSpec,
    options: &GridOptions,
) -> Result<MatrixGrid, AttributionError> {
    let selection = select_events(dataset, records, slice)?;
    grid_from_selection(dataset, &selection, slice, options)
}

pub(crate) fn grid_from_selection(
    dataset: &Dataset,
    selection: &Selection,
    slice: &SliceSpec,
    options: &GridOptions,
) -> Result<MatrixGrid, AttributionError> {
    let attrs = &slice.attributes;
    let n = attrs.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|c| (c..n).map(move |r| (c, r))).collect();
    let matrices = pairs
        .par_iter()
        .map(|&(c, r)| HeatMatrix::compute(dataset, selection, attrs[c], attrs[r], options.aggregation))
        .collect::<Result<Vec<_>, _>>()?;

    let mut slots: Vec<Option<GridBlock>> = vec![None; n * n];
    for (&(c, r), m) in pairs.iter().zip(&matrices) {
        let series = Some([m.positive.flat_series(), m.negative.flat_series()]);
        let heat = GridBlock {
            col: c,
            row: r,
            kind: if c == r { BlockKind::Diagonal } else { BlockKind::Heat },
            p: m.p,
            q: m.q,
            rows: m.rows(),
            cols: m.cols(),
            positive: m.positive.totals(),
            negative: m.negative.totals(),
            series,
            values: heat_matrix(m, slice.mode),
        };
        slots[r * n + c] = Some(heat);
        if c != r {
            let var = m.variance();
            slots[c * n + r] = Some(GridBlock {
                col: r,
                row: c,
                kind: BlockKind::Variance,
                p: var.p,
                q: var.q,
                rows: var.rows,
                cols: var.cols,
                values: var.values(slice.mode),
                positive: var.positive,
                negative: var.negative,
                series: None,
            });
        }
    }
    Ok(MatrixGrid {
        slice: slice.clone(),
        aggregation: options.aggregation,
        blocks: slots
            .into_iter()
            .map(|b| b.expect("every grid slot is filled"))
            .collect(),
        selected_events: selection.event_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{AttributeSchema, Event, Label, SequenceInstance};

    fn dataset(attrs: usize) -> (Dataset, Vec<AttentionRecord>) {
        let schema = (0..attrs)
            .map(|a| AttributeSchema::categorical(format!("a{a}"), vec!["x".into(), "y".into()]).unwrap())
            .collect();
        let instances = (0..4)
            .map(|i| SequenceInstance {
                id: format!("s{i}"),
                label: Label::from_index(i % 2),
                events: (0..3)
                    .map(|t| Event::new((0..attrs).map(|a| if (i + t + a) % 2 == 0 { "x" } else { "y" })))
                    .collect(),
            })
            .collect();
        let ds = Dataset::new(schema, instances).unwrap();
        let records = ds
            .instances()
            .iter()
            .enumerate()
            .map(|(i, s)| AttentionRecord {
                id: s.id.clone(),
                raw: vec![1.0 / 3.0; 3],
                normalized: (0..3).map(|t| [0.1, 0.5, 1.0][(i + t) % 3]).collect(),
            })
            .collect();
        (ds, records)
    }

    #[test]
    fn fourteen_attributes() {
        let (ds, records) = dataset(14);
        let grid = build_grid(&ds, &records, &SliceSpec::full(&ds), &GridOptions::default()).unwrap();
        assert_eq!(grid.blocks.len(), 196);
        assert_eq!(grid.count(BlockKind::Heat), 91);
        assert_eq!(grid.count(BlockKind::Variance), 91);
        assert_eq!(grid.count(BlockKind::Diagonal), 14);
        for b in &grid.blocks {
            assert_eq!(b.kind == BlockKind::Heat, b.col < b.row);
            assert_eq!(b.kind == BlockKind::Variance, b.col > b.row);
            let (first, second) = (b.col.min(b.row), b.col.max(b.row));
            assert_eq!(
                (b.p, b.q),
                (grid.slice.attributes[first], grid.slice.attributes[second])
            );
        }
    }

    #[test]
    fn single_attribute_is_one_diagonal() {
        let (ds, records) = dataset(3);
        let slice = SliceSpec::full(&ds).with_attributes(vec![2]);
        let grid = build_grid(&ds, &records, &slice, &GridOptions::default()).unwrap();
        assert_eq!(grid.blocks.len(), 1);
        assert_eq!(grid.blocks[0].kind, BlockKind::Diagonal);
        assert_eq!((grid.blocks[0].p, grid.blocks[0].q), (2, 2));
    }

    #[test]
    fn display_is_bounded() {
        let (ds, records) = dataset(3);
        let grid = build_grid(&ds, &records, &SliceSpec::full(&ds), &GridOptions::default()).unwrap();
        for b in &grid.blocks {
            let MatrixValues::Signed(v) = grid.display(b) else {
                panic!()
            };
            assert!(v.iter().all(|x| x.abs() <= 1.0));
        }
        assert!(grid.heat_scale() > 0.0);
    }

    #[test]
    fn empty_selection_grid_is_zero() {
        let (ds, records) = dataset(2);
        let slice = SliceSpec::full(&ds).with_attention(0.2, 0.3);
        let grid = build_grid(&ds, &records, &slice, &GridOptions::default()).unwrap();
        assert_eq!(grid.selected_events, 0);
        assert_eq!(grid.heat_scale(), 0.0);
        assert!(grid
            .blocks
            .iter()
            .all(|b| b.positive.iter().chain(&b.negative).all(|v| *v == 0.0)));
    }
}
