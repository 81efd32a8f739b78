//! Group-over-token attention heatmaps as TSV and SVG.

use std::fmt::Write as _;

use crate::autodiff::{Result, Tape};
use crate::batch::{Span, TextBatch};
use crate::model::{Mode, TextGroupModel};
use crate::world::vocab::PAD;

/// Soft attention `A'` of one caption (rows = groups, columns = tokens)
/// and the hard group of each token.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub tokens: Vec<String>,
    pub weights: Vec<Vec<f64>>,
    pub groups: Vec<usize>,
}

impl Heatmap {
    pub fn n_groups(&self) -> usize {
        self.weights.len()
    }
}

/// Eval-mode heatmap of `ids`, labelled with `labels`.
pub fn heatmap(model: &TextGroupModel, ids: &[usize], labels: Vec<String>) -> Result<Heatmap> {
    assert_eq!(ids.len(), labels.len(), "one label per token");
    let batch = TextBatch::new(&[ids.to_vec()], PAD, vec![]);
    let tape = Tape::new();
    let p = model.params.bind_constant(&tape);
    let (_, g) = model.encode_text(&p, &batch, Mode::Eval)?;
    let soft = g.soft_attention.value();
    let (k, m) = (model.config.n_groups, ids.len());
    let weights = (0..k).map(|r| soft[r * m..(r + 1) * m].to_vec()).collect();
    let groups = g.hard_assignment[0]
        .iter()
        .map(|a| a.expect("every token is real"))
        .collect();
    Ok(Heatmap {
        tokens: labels,
        weights,
        groups,
    })
}

/// Header `group` plus one column per token, then one row per group with
/// weights printed to 6 decimals.
pub fn to_tsv(h: &Heatmap) -> String {
    let mut out = String::from("group");
    for t in &h.tokens {
        out.push('\t');
        out.push_str(&t.replace(['\t', '\n'], " "));
    }
    out.push('\n');
    for (k, row) in h.weights.iter().enumerate() {
        out.push_str(&k.to_string());
        for w in row {
            write!(out, "\t{w:.6}").expect("write to string");
        }
        out.push('\n');
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const CELL: usize = 40;
const LEFT: usize = 60;
const TOP: usize = 20;
const BOTTOM: usize = 70;

/// Grid heatmap: one `rect.cell` per (group, token), darker for larger
/// weight, and a stroked `rect.assigned` outline around each run of tokens
/// hard-assigned to the same group.
pub fn to_svg(h: &Heatmap) -> String {
    let (k, n) = (h.n_groups(), h.tokens.len());
    let width = LEFT + n * CELL + 10;
    let height = TOP + k * CELL + BOTTOM;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="monospace" font-size="11">"#
    )
    .unwrap();
    for (g, row) in h.weights.iter().enumerate() {
        let y = TOP + g * CELL;
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">g{g}</text>"#, LEFT - 6, y + CELL / 2 + 4).unwrap();
        for (j, &w) in row.iter().enumerate() {
            let shade = (255.0 * (1.0 - w.clamp(0.0, 1.0))).round() as u8;
            writeln!(
                s,
                r#"<rect class="cell" x="{}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({shade},{shade},{shade})"><title>{w:.6}</title></rect>"#,
                LEFT + j * CELL
            )
            .unwrap();
        }
    }
    let mut start = 0;
    while start < n {
        let g = h.groups[start];
        let mut end = start + 1;
        while end < n && h.groups[end] == g {
            end += 1;
        }
        writeln!(
            s,
            r##"<rect class="assigned" x="{}" y="{}" width="{}" height="{CELL}" fill="none" stroke="#d62728" stroke-width="2"/>"##,
            LEFT + start * CELL,
            TOP + g * CELL,
            (end - start) * CELL
        )
        .unwrap();
        start = end;
    }
    let base = TOP + k * CELL + 12;
    for (j, t) in h.tokens.iter().enumerate() {
        let x = LEFT + j * CELL + CELL / 2;
        writeln!(
            s,
            r#"<text x="{x}" y="{base}" transform="rotate(45 {x} {base})">{}</text>"#,
            escape(t)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Fraction of tokens that continue their left neighbour's group or open
/// a run exactly at the start of a gold span.
pub fn contiguity(groups: &[usize], gold: &[Span]) -> f64 {
    if groups.is_empty() {
        return 0.0;
    }
    let good = (0..groups.len())
        .filter(|&j| {
            let continues = j > 0 && groups[j] == groups[j - 1];
            continues || gold.iter().any(|s| s.start == j)
        })
        .count();
    good as f64 / groups.len() as f64
}
