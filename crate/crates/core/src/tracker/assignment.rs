//! Minimum-cost bipartite assignment with forbidden pairs.
//!
//! The objective is lexicographic: first match as many pairs as the allowed
//! entries permit, then minimise the summed cost of the matched pairs. Among
//! equally good matchings the one chosen is the smallest when its pairs are
//! listed by row: row 0 takes the lowest column it can, then row 1, and so
//! on, with "unmatched" ranked after every column.
//!
//! Internally the rectangular problem is padded to a square one where
//! forbidden entries carry a penalty larger than any achievable difference
//! in allowed cost, solved with the shortest-augmenting-path Hungarian
//! method, and then the optimal dual is used to enumerate the tight edges
//! from which the lexicographically smallest optimum is extracted.

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Matched `(row, col)` pairs in ascending row order.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of the matched costs, accumulated in row order.
    pub total: f64,
}

impl Assignment {
    fn empty() -> Self {
        Self {
            pairs: Vec::new(),
            total: 0.0,
        }
    }

    pub fn unmatched_rows(&self, rows: usize) -> Vec<usize> {
        let mut matched = vec![false; rows];
        for &(r, _) in &self.pairs {
            matched[r] = true;
        }
        (0..rows).filter(|&r| !matched[r]).collect()
    }

    pub fn unmatched_cols(&self, cols: usize) -> Vec<usize> {
        let mut matched = vec![false; cols];
        for &(_, c) in &self.pairs {
            matched[c] = true;
        }
        (0..cols).filter(|&c| !matched[c]).collect()
    }
}

/// Solve the assignment problem on an `n x m` cost matrix.
///
/// Entries above `forbid_above`, and non-finite entries, may not be paired.
/// All rows must have the same length.
pub fn assign(cost: &[Vec<f64>], forbid_above: Option<f64>) -> Assignment {
    let n = cost.len();
    if n == 0 {
        return Assignment::empty();
    }
    let m = cost[0].len();
    assert!(cost.iter().all(|r| r.len() == m), "ragged cost matrix");
    if m == 0 {
        return Assignment::empty();
    }

    let allowed = |i: usize, j: usize| {
        let c = cost[i][j];
        c.is_finite() && forbid_above.is_none_or(|t| c <= t)
    };

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..m {
            if allowed(i, j) {
                lo = lo.min(cost[i][j]);
                hi = hi.max(cost[i][j]);
            }
        }
    }
    if lo > hi {
        return Assignment::empty();
    }
    let k = n.min(m) as f64;
    let penalty = hi + k * (hi - lo) + 1.0;

    let size = n.max(m);
    let mut a = vec![vec![0.0; size]; size];
    for (i, row) in a.iter_mut().enumerate().take(n) {
        for (j, slot) in row.iter_mut().enumerate().take(m) {
            *slot = if allowed(i, j) { cost[i][j] } else { penalty };
        }
    }

    let (row_mate, u, v) = hungarian(&a);

    let scale = a
        .iter()
        .flatten()
        .fold(1.0f64, |acc, x| acc.max(x.abs()));
    let eps = 1e-9 * scale;
    let mut tight: Vec<Vec<bool>> = (0..size)
        .map(|i| (0..size).map(|j| a[i][j] - u[i] - v[j] <= eps).collect())
        .collect();
    // the Hungarian matching is tight by construction; keep it so even under rounding
    for (i, &j) in row_mate.iter().enumerate() {
        tight[i][j] = true;
    }

    let mut mate = row_mate;
    for r in 0..n {
        let mut fixed = false;
        for c in 0..m {
            if !allowed(r, c) || !tight[r][c] {
                continue;
            }
            let mut trial = tight.clone();
            for (cc, t) in trial[r].iter_mut().enumerate() {
                *t = cc == c;
            }
            for (rr, row) in trial.iter_mut().enumerate() {
                if rr != r {
                    row[c] = false;
                }
            }
            if let Some(next) = repair(&trial, &mate) {
                tight = trial;
                mate = next;
                fixed = true;
                break;
            }
        }
        if !fixed {
            let mut trial = tight.clone();
            for c in 0..m {
                if allowed(r, c) {
                    trial[r][c] = false;
                }
            }
            if let Some(next) = repair(&trial, &mate) {
                tight = trial;
                mate = next;
            }
        }
    }

    let mut pairs = Vec::new();
    let mut total = 0.0;
    for (r, &c) in mate.iter().enumerate().take(n) {
        if c < m && allowed(r, c) {
            pairs.push((r, c));
            total += cost[r][c];
        }
    }
    Assignment { pairs, total }
}

/// Square Hungarian method (shortest augmenting paths with potentials).
/// Returns the row-to-column matching and the row and column potentials.
fn hungarian(a: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = a.len();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_mate = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            row_mate[p[j] - 1] = j - 1;
        }
    }
    (row_mate, u[1..].to_vec(), v[1..].to_vec())
}

/// Turn `mate` into a perfect matching of `graph`, reusing every pair that is
/// still an edge. Returns `None` when no perfect matching exists.
fn repair(graph: &[Vec<bool>], mate: &[usize]) -> Option<Vec<usize>> {
    let n = graph.len();
    let mut row_mate: Vec<Option<usize>> = vec![None; n];
    let mut col_mate: Vec<Option<usize>> = vec![None; n];
    for (r, &c) in mate.iter().enumerate() {
        if graph[r][c] {
            row_mate[r] = Some(c);
            col_mate[c] = Some(r);
        }
    }
    for r in 0..n {
        if row_mate[r].is_none() {
            let mut seen = vec![false; n];
            if !augment(graph, r, &mut seen, &mut row_mate, &mut col_mate) {
                return None;
            }
        }
    }
    Some(row_mate.into_iter().map(|c| c.expect("perfect")).collect())
}

fn augment(
    graph: &[Vec<bool>],
    r: usize,
    seen: &mut [bool],
    row_mate: &mut [Option<usize>],
    col_mate: &mut [Option<usize>],
) -> bool {
    for c in 0..graph.len() {
        if !graph[r][c] || seen[c] {
            continue;
        }
        seen[c] = true;
        let free = match col_mate[c] {
            None => true,
            Some(other) => augment(graph, other, seen, row_mate, col_mate),
        };
        if free {
            row_mate[r] = Some(c);
            col_mate[c] = Some(r);
            return true;
        }
    }
    false
}
