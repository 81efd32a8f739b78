//! Token-level segmentation scores against gold phrase spans.
//!
//! Tokens outside every gold span are unannotated. They never count
//! against a prediction: they are dropped from the union of the IoU and
//! from the precision denominator.

use serde::{Deserialize, Serialize};

use super::hungarian::hungarian_match;
use crate::batch::Span;

/// Gold spans of one caption and the induced annotation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationGold {
    pub spans: Vec<Span>,
    /// `annotated[j]` iff token `j` lies in some span.
    pub annotated: Vec<bool>,
}

impl SegmentationGold {
    pub fn new(spans: Vec<Span>, len: usize) -> Self {
        let mut annotated = vec![false; len];
        for s in &spans {
            for a in &mut annotated[s.start..s.end] {
                *a = true;
            }
        }
        Self { spans, annotated }
    }

    pub fn span_tokens(&self, i: usize) -> Vec<usize> {
        (self.spans[i].start..self.spans[i].end).collect()
    }
}

/// Scores of one (group, span) pair, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PairScores {
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PairScores {
    fn add(&mut self, o: &PairScores) {
        self.iou += o.iou;
        self.precision += o.precision;
        self.recall += o.recall;
        self.f1 += o.f1;
    }

    fn scale(&self, s: f64) -> PairScores {
        PairScores {
            iou: self.iou * s,
            precision: self.precision * s,
            recall: self.recall * s,
            f1: self.f1 * s,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

struct Counts {
    inter: usize,
    pred_annotated: usize,
    union: usize,
    gold: usize,
}

fn counts(pred: &[usize], gold: &[usize], annotated: &[bool]) -> Counts {
    let mut in_pred = vec![false; annotated.len()];
    for &j in pred {
        in_pred[j] = true;
    }
    let mut in_gold = vec![false; annotated.len()];
    for &j in gold {
        in_gold[j] = true;
    }
    let mut c = Counts {
        inter: 0,
        pred_annotated: 0,
        union: 0,
        gold: 0,
    };
    for j in 0..annotated.len() {
        let p = in_pred[j];
        let g = in_gold[j];
        c.inter += (p && g) as usize;
        c.pred_annotated += (p && annotated[j]) as usize;
        c.union += ((p && annotated[j]) || g) as usize;
        c.gold += g as usize;
    }
    c
}

/// `|pred ∩ gold| / |(pred ∩ annotated) ∪ gold|`, 0 on an empty union.
///
/// ```
/// use textgroup::eval::token_iou;
/// // token 1 is predicted but unannotated, so it does not enlarge the union
/// let annotated = [false, false, true, true, false];
/// assert_eq!(token_iou(&[1, 2, 3], &[2, 3], &annotated), 1.0);
/// ```
///
/// # Panics
/// If an index is outside `annotated`.
pub fn token_iou(pred: &[usize], gold: &[usize], annotated: &[bool]) -> f64 {
    let c = counts(pred, gold, annotated);
    ratio(c.inter, c.union)
}

/// IoU, precision over annotated predicted tokens, recall over the span,
/// and their harmonic mean (0 when both are 0).
pub fn pair_scores(pred: &[usize], gold: &[usize], annotated: &[bool]) -> PairScores {
    let c = counts(pred, gold, annotated);
    let precision = ratio(c.inter, c.pred_annotated);
    let recall = ratio(c.inter, c.gold);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    PairScores {
        iou: ratio(c.inter, c.union),
        precision,
        recall,
        f1,
    }
}

/// One Hungarian-matched pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub group: usize,
    pub gold: usize,
    pub scores: PairScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleMatch {
    pub pairs: Vec<MatchedPair>,
    /// Mean over `pairs`.
    pub mean: PairScores,
}

/// Matching outcome of a corpus. `examples[i]` is `None` for skipped
/// examples (no gold span).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub examples: Vec<Option<ExampleMatch>>,
    /// Mean of the per-example means, in percent.
    pub corpus: PairScores,
    pub n_examples: usize,
    pub n_skipped: usize,
}

/// Token sets of groups `0..n_groups` from a token → group assignment.
pub fn group_tokens(assignment: &[Option<usize>], n_groups: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]; n_groups];
    for (j, g) in assignment.iter().enumerate() {
        if let Some(g) = g {
            out[*g].push(j);
        }
    }
    out
}

/// Matches the groups of one caption to its gold spans by IoU.
pub fn match_example(assignment: &[Option<usize>], gold: &SegmentationGold, n_groups: usize) -> ExampleMatch {
    let groups = group_tokens(assignment, n_groups);
    let spans: Vec<Vec<usize>> = (0..gold.spans.len()).map(|i| gold.span_tokens(i)).collect();
    let table: Vec<Vec<PairScores>> = groups
        .iter()
        .map(|g| spans.iter().map(|s| pair_scores(g, s, &gold.annotated)).collect())
        .collect();
    let ious: Vec<Vec<f64>> = table.iter().map(|r| r.iter().map(|s| s.iou).collect()).collect();
    let pairs: Vec<MatchedPair> = hungarian_match(&ious)
        .into_iter()
        .map(|(group, g)| MatchedPair {
            group,
            gold: g,
            scores: table[group][g],
        })
        .collect();
    let mut sum = PairScores::default();
    for p in &pairs {
        sum.add(&p.scores);
    }
    let mean = sum.scale(1.0 / pairs.len().max(1) as f64);
    ExampleMatch { pairs, mean }
}

/// Per-example matching and corpus averages (×100). `assignments[i]` holds
/// the group of every token of caption `i` (`None` for padding).
pub fn segmentation_metrics(
    assignments: &[Vec<Option<usize>>],
    gold: &[SegmentationGold],
    n_groups: usize,
) -> MatchResult {
    assert_eq!(assignments.len(), gold.len(), "one assignment per gold entry");
    let examples: Vec<Option<ExampleMatch>> = assignments
        .iter()
        .zip(gold)
        .map(|(a, g)| (!g.spans.is_empty()).then(|| match_example(a, g, n_groups)))
        .collect();
    let mut sum = PairScores::default();
    let mut n = 0;
    for e in examples.iter().flatten() {
        sum.add(&e.mean);
        n += 1;
    }
    MatchResult {
        corpus: sum.scale(100.0 / n.max(1) as f64),
        n_skipped: examples.len() - n,
        n_examples: n,
        examples,
    }
}
