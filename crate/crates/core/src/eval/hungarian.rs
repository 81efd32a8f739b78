//! Maximum-score one-to-one assignment.

/// Pairs `(row, col)` maximizing the total score of a rectangular matrix,
/// sorted by row. Exactly `min(rows, cols)` pairs are returned.
///
/// Runs the O(n²m) shortest augmenting path method on negated scores.
///
/// # Panics
/// If the rows have different lengths or a score is not finite.
pub fn hungarian_match(scores: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = scores.len();
    let cols = scores.first().map_or(0, Vec::len);
    assert!(scores.iter().all(|r| r.len() == cols), "ragged score matrix");
    assert!(
        scores.iter().flatten().all(|x| x.is_finite()),
        "scores must be finite"
    );
    if rows == 0 || cols == 0 {
        return vec![];
    }
    let mut pairs = if rows <= cols {
        min_cost(rows, cols, |i, j| -scores[i][j])
    } else {
        min_cost(cols, rows, |i, j| -scores[j][i])
            .into_iter()
            .map(|(c, r)| (r, c))
            .collect()
    };
    pairs.sort_unstable();
    pairs
}

/// Minimum-cost assignment of every row, `n <= m`. Indices in the
/// potentials are 1-based; column 0 is the virtual start.
fn min_cost(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        while j0 != 0 {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
        }
    }
    (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .collect()
}
