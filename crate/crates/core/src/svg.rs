//! Static SVG renderings of the matrix grid and T-partite graphs.

use std::fmt::Write;

use crate::attribution::{GraphVariant, MatrixGrid, MatrixValues, TPartiteGraph};
use crate::dataset::{Dataset, Label};

const CELL: f64 = 12.0;
const GAP: f64 = 8.0;
const MARGIN: f64 = 90.0;
const LEGEND: f64 = 50.0;

const BLUE: (u8, u8, u8) = (33, 102, 172);
const RED: (u8, u8, u8) = (178, 24, 43);
const PURPLE: (u8, u8, u8) = (118, 42, 131);
const ORANGE: (u8, u8, u8) = (230, 97, 1);

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// White blended towards blue for positive intensities and red for negative.
fn diverging(v: f64) -> String {
    let (r, g, b) = if v >= 0.0 { BLUE } else { RED };
    let a = v.abs().min(1.0);
    let mix = |c: u8| (255.0 + (c as f64 - 255.0) * a).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(r), mix(g), mix(b))
}

fn rgb(c: (u8, u8, u8)) -> String {
    format!("#{:02x}{:02x}{:02x}", c.0, c.1, c.2)
}

/// Grid of matrices with attribute labels and a log colormap legend. Columns
/// of the grid run along the slice's attribute list; inside each block the
/// horizontal axis shows the levels of the column attribute.
pub fn grid_svg(grid: &MatrixGrid, dataset: &Dataset) -> String {
    let attrs = &grid.slice.attributes;
    let sizes: Vec<f64> = attrs
        .iter()
        .map(|&a| dataset.schema()[a].level_count() as f64 * CELL)
        .collect();
    let mut offsets = Vec::with_capacity(attrs.len());
    let mut acc = MARGIN;
    for s in &sizes {
        offsets.push(acc);
        acc += s + GAP;
    }
    let width = acc + GAP;
    let height = acc + LEGEND;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, &a) in attrs.iter().enumerate() {
        let name = escape(&dataset.schema()[a].name);
        let mid = offsets[k] + sizes[k] / 2.0;
        let _ = writeln!(
            out,
            r#"<text x="{mid:.1}" y="{:.1}" text-anchor="middle">{name}</text>"#,
            MARGIN - 6.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{mid:.1}" text-anchor="end">{name}</text>"#,
            MARGIN - 6.0
        );
    }
    for b in &grid.blocks {
        let (x0, y0) = (offsets[b.col], offsets[b.row]);
        let display = grid.display(b);
        // Matrix rows are levels of p; put the column attribute on x.
        let p_on_x = b.p == attrs[b.col];
        let _ = writeln!(
            out,
            r##"<g class="{:?}"><rect x="{x0:.1}" y="{y0:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#bbb"/>"##,
            b.kind, sizes[b.col], sizes[b.row]
        );
        for i in 0..b.rows {
            for j in 0..b.cols {
                let k = i * b.cols + j;
                let (xi, yi) = if p_on_x { (i, j) } else { (j, i) };
                let (x, y) = (x0 + xi as f64 * CELL, y0 + yi as f64 * CELL);
                match &display {
                    MatrixValues::Signed(v) => {
                        let _ = writeln!(
                            out,
                            r#"<rect x="{x:.1}" y="{y:.1}" width="{CELL}" height="{CELL}" fill="{}"/>"#,
                            diverging(v[k])
                        );
                    }
                    MatrixValues::Pair { pos, neg } => {
                        let _ = writeln!(
                            out,
                            r#"<path d="M{x:.1},{y:.1}h{CELL}L{x:.1},{:.1}Z" fill="{}"/><path d="M{:.1},{y:.1}v{CELL}h-{CELL}Z" fill="{}"/>"#,
                            y + CELL,
                            diverging(pos[k]),
                            x + CELL,
                            diverging(-neg[k])
                        );
                    }
                }
            }
        }
        let _ = writeln!(out, "</g>");
    }
    let ly = acc + 10.0;
    for s in 0..=20 {
        let v = s as f64 / 10.0 - 1.0;
        let _ = writeln!(
            out,
            r#"<rect x="{:.1}" y="{ly:.1}" width="10" height="10" fill="{}"/>"#,
            MARGIN + s as f64 * 10.0,
            diverging(v)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN:.1}" y="{:.1}">neg</text><text x="{:.1}" y="{:.1}" text-anchor="end">pos</text>"#,
        ly + 22.0,
        MARGIN + 210.0,
        ly + 22.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}">log scale; heat max {:.4}, variance max {:.4}</text>"#,
        MARGIN + 220.0,
        ly + 9.0,
        grid.heat_scale(),
        grid.variance_scale()
    );
    out.push_str("</svg>\n");
    out
}

const AXIS_GAP: f64 = 70.0;
const GRAPH_HEIGHT: f64 = 360.0;
const PAD: f64 = 40.0;

fn graph_group(out: &mut String, graph: &TPartiteGraph, dataset: &Dataset, x_offset: f64) {
    let x_of = |t: usize| x_offset + PAD + (t - graph.axes[0]) as f64 * AXIS_GAP;
    let y_of = |pos: usize| PAD + graph.layout[pos] * GRAPH_HEIGHT;
    let single_class = match graph.classes.as_slice() {
        [c] => Some(*c),
        _ => None,
    };
    let (pos_color, neg_color) = if single_class.is_some() {
        (BLUE, RED)
    } else {
        (PURPLE, ORANGE)
    };
    for &t in &graph.axes {
        let x = x_of(t);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.1}" y1="{PAD:.1}" x2="{x:.1}" y2="{:.1}" stroke="#ccc"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">t{t}</text>"##,
            PAD + GRAPH_HEIGHT,
            PAD + GRAPH_HEIGHT + 14.0
        );
    }
    if let GraphVariant::Single { attribute } = graph.variant {
        for (k, label) in dataset.schema()[attribute].levels.iter().enumerate() {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                x_of(graph.axes[0]) - 8.0,
                y_of(k) + 3.0,
                escape(label)
            );
        }
    }
    let max_edge = graph.max_edge_frequency.max(1) as f64;
    for e in &graph.edges {
        let [fp, fneg] = e.frequency;
        let color = if fp >= fneg { pos_color } else { neg_color };
        let opacity = 0.1 + 0.9 * (fp.max(fneg) as f64 / max_edge);
        let (x1, y1, x2, y2) = (x_of(e.from.0), y_of(e.from.1), x_of(e.to.0), y_of(e.to.1));
        let d = if e.curved {
            format!(
                "M{x1:.1},{y1:.1}Q{:.1},{:.1} {x2:.1},{y2:.1}",
                (x1 + x2) / 2.0,
                y1 - 2.0 * e.bow * AXIS_GAP
            )
        } else {
            format!("M{x1:.1},{y1:.1}L{x2:.1},{y2:.1}")
        };
        let _ = writeln!(
            out,
            r#"<path d="{d}" fill="none" stroke="{}" stroke-opacity="{opacity:.3}" stroke-width="1.5"/>"#,
            rgb(color)
        );
    }
    let max_node = graph.max_node_frequency.max(1) as f64;
    for n in &graph.nodes {
        let total = (n.frequency[0] + n.frequency[1]) as f64;
        let r = 2.0 + 6.0 * (total / max_node / graph.classes.len() as f64).sqrt();
        let color = match single_class {
            Some(Label::Positive) => BLUE,
            Some(Label::Negative) => RED,
            None if n.frequency[0] >= n.frequency[1] => PURPLE,
            None => ORANGE,
        };
        let _ = writeln!(
            out,
            r#"<circle cx="{:.1}" cy="{:.1}" r="{r:.2}" fill="{}"/>"#,
            x_of(n.t),
            y_of(n.position),
            rgb(color)
        );
    }
}

/// Graphs side by side: per-class single-attribute graphs, or one combined graph.
pub fn tpartite_svg(graphs: &[TPartiteGraph], dataset: &Dataset) -> String {
    let panel = |g: &TPartiteGraph| 2.0 * PAD + (g.axes.len().max(1) - 1) as f64 * AXIS_GAP + PAD;
    let width: f64 = graphs.iter().map(panel).sum::<f64>().max(2.0 * PAD);
    let height = GRAPH_HEIGHT + 2.0 * PAD + 10.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let mut x = 0.0;
    for g in graphs {
        let title = match (g.variant, g.classes.as_slice()) {
            (GraphVariant::Single { attribute }, [c]) => format!("{} ({})", dataset.schema()[attribute].name, c),
            (GraphVariant::Single { attribute }, _) => dataset.schema()[attribute].name.clone(),
            (GraphVariant::Combined { primary, secondary }, _) => {
                format!(
                    "{} / {}",
                    dataset.schema()[primary].name,
                    dataset.schema()[secondary].name
                )
            }
        };
        let _ = writeln!(out, r#"<text x="{:.1}" y="16">{}</text>"#, x + PAD, escape(&title));
        let _ = writeln!(out, "<g>");
        graph_group(&mut out, g, dataset, x);
        let _ = writeln!(out, "</g>");
        x += panel(g);
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diverging_endpoints() {
        assert_eq!(diverging(0.0), "#ffffff");
        assert_eq!(diverging(1.0), "#2166ac");
        assert_eq!(diverging(-1.0), "#b2182b");
    }

    #[test]
    fn escapes_markup() {
        assert_eq!(escape("a<b & \"c\""), "a&lt;b &amp; &quot;c&quot;");
    }
}
