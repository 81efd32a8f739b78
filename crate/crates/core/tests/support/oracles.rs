//! Brute-force oracles for matching and the segmentation metrics.

use std::collections::BTreeSet;

use textgroup::eval::{hungarian_match, pair_scores, token_iou};

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = vec![];
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Best total over all injective maps from the smaller side.
pub fn brute_force(m: &[Vec<f64>]) -> f64 {
    let (r, c) = (m.len(), m[0].len());
    let (small, large) = (r.min(c), r.max(c));
    let at = |i: usize, j: usize| if r <= c { m[i][j] } else { m[j][i] };
    let mut best = f64::NEG_INFINITY;
    for perm in permutations(large) {
        let total: f64 = (0..small).map(|i| at(i, perm[i])).sum();
        best = best.max(total);
    }
    best
}

/// Panics unless the matching is one-to-one, of size min(r, c), and
/// reaches the brute-force optimum.
pub fn check_match(m: &[Vec<f64>]) {
    let pairs = hungarian_match(m);
    let (r, c) = (m.len(), m[0].len());
    assert_eq!(pairs.len(), r.min(c));
    let rows: BTreeSet<_> = pairs.iter().map(|p| p.0).collect();
    let cols: BTreeSet<_> = pairs.iter().map(|p| p.1).collect();
    assert_eq!(rows.len(), pairs.len());
    assert_eq!(cols.len(), pairs.len());
    let total: f64 = pairs.iter().map(|&(i, j)| m[i][j]).sum();
    let best = brute_force(m);
    assert!((total - best).abs() <= 1e-12 * best.abs().max(1.0), "{total} vs {best} on {m:?}");
}

/// Direct set arithmetic on the definitions.
pub fn oracle(pred: &BTreeSet<usize>, gold: &BTreeSet<usize>, ann: &BTreeSet<usize>) -> (f64, f64, f64, f64) {
    let inter = pred.intersection(gold).count() as f64;
    let pred_ann: BTreeSet<usize> = pred.intersection(ann).copied().collect();
    let union = pred_ann.union(gold).count() as f64;
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let p = div(inter, pred_ann.len() as f64);
    let r = div(inter, gold.len() as f64);
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (div(inter, union), p, r, f)
}

pub fn subset(mask: u32) -> BTreeSet<usize> {
    (0..8).filter(|i| mask >> i & 1 == 1).collect()
}

/// Every (pred, gold, annotated) triple on 8 tokens, with gold inside the
/// annotated set as the gold mask is defined.
/// Panics on the first disagreement; returns the number of triples.
pub fn metric_sweep() -> u64 {
    let mut checked = 0u64;
    for a in 0u32..256 {
        let ann = subset(a);
        let annotated: Vec<bool> = (0..8).map(|i| ann.contains(&i)).collect();
        let mut g = a;
        loop {
            let gold = subset(g);
            let gold_v: Vec<usize> = gold.iter().copied().collect();
            for p in 0u32..256 {
                let pred = subset(p);
                let pred_v: Vec<usize> = pred.iter().copied().collect();
                let s = pair_scores(&pred_v, &gold_v, &annotated);
                let (iou, pr, re, f1) = oracle(&pred, &gold, &ann);
                assert_eq!((s.iou, s.precision, s.recall), (iou, pr, re));
                assert!((s.f1 - f1).abs() < 1e-15);
                assert_eq!(token_iou(&pred_v, &gold_v, &annotated), iou);
                for v in [s.iou, s.precision, s.recall, s.f1] {
                    assert!((0.0..=1.0).contains(&v));
                }
                if pred.intersection(&ann).next().is_some() && !gold.is_empty() {
                    assert_eq!(s.f1 == 0.0, pred.intersection(&gold).count() == 0);
                }
                checked += 1;
            }
            if g == 0 {
                break;
            }
            g = (g - 1) & a;
        }
    }
    checked
}

