//! Maximum-weight assignment by the Kuhn–Munkres (Hungarian) algorithm.
//!
//! Rectangular inputs are zero-padded to square. The O(n³) shortest
//! augmenting path formulation runs on the complement `max - r`; a
//! refinement pass then picks the lexicographically smallest optimal
//! row-to-column vector so results do not depend on solver internals.

use crate::error::{Error, Result};

/// Optimal matching on a reward matrix, by row/column index.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexAssignment {
    /// `(row, column, reward)` in ascending row order.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

impl IndexAssignment {
    pub fn total(&self) -> f64 {
        self.pairs.iter().map(|p| p.2).sum()
    }
}

/// Minimum-cost perfect matching of a square matrix. Returns `col_of_row`.
fn solve_min(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based potentials; p[j] = row matched to column j, 0 = none.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
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
    let mut col_of_row = vec![0; n];
    for j in 1..=n {
        col_of_row[p[j] - 1] = j - 1;
    }
    col_of_row
}

fn min_cost_value(cost: &[Vec<f64>]) -> f64 {
    solve_min(cost).iter().enumerate().map(|(i, &j)| cost[i][j]).sum()
}

fn submatrix(cost: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|&r| cols.iter().map(|&c| cost[r][c]).collect())
        .collect()
}

/// Lexicographically smallest `col_of_row` among the optimal matchings.
fn lexicographic_min(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let optimum = min_cost_value(cost);
    let scale = cost.iter().flatten().fold(1.0f64, |m, c| m.max(c.abs())) * n as f64;
    let eps = 1e-12 * scale;

    let mut fixed: Vec<usize> = Vec::with_capacity(n);
    let mut fixed_cost = 0.0;
    for row in 0..n {
        let rest_rows: Vec<usize> = (row + 1..n).collect();
        let mut chosen = None;
        for col in 0..n {
            if fixed.contains(&col) {
                continue;
            }
            let rest_cols: Vec<usize> = (0..n).filter(|c| *c != col && !fixed.contains(c)).collect();
            let rest = min_cost_value(&submatrix(cost, &rest_rows, &rest_cols));
            if fixed_cost + cost[row][col] + rest <= optimum + eps {
                chosen = Some(col);
                break;
            }
        }
        // The optimum is always reachable; fall back to the solver if rounding disagrees.
        let col = chosen.unwrap_or_else(|| {
            let rest_cols: Vec<usize> = (0..n).filter(|c| !fixed.contains(c)).collect();
            let rows: Vec<usize> = (row..n).collect();
            rest_cols[solve_min(&submatrix(cost, &rows, &rest_cols))[0]]
        });
        fixed_cost += cost[row][col];
        fixed.push(col);
    }
    fixed
}

/// Maximum-total-reward assignment of rows to columns.
///
/// Entries must be finite and non-negative. Ties are broken toward the
/// lexicographically smallest row-to-column vector of the zero-padded square
/// problem.
pub fn hungarian(rewards: &[Vec<f64>]) -> Result<IndexAssignment> {
    let rows = rewards.len();
    let cols = rewards.first().map_or(0, Vec::len);
    if rewards.iter().any(|r| r.len() != cols) {
        return Err(Error::input("reward matrix rows have different lengths"));
    }
    if rewards.iter().flatten().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::input("reward entries must be finite and non-negative"));
    }
    if rows == 0 || cols == 0 {
        return Ok(IndexAssignment {
            pairs: Vec::new(),
            unmatched_rows: (0..rows).collect(),
            unmatched_cols: (0..cols).collect(),
        });
    }
    let n = rows.max(cols);
    let max = rewards.iter().flatten().copied().fold(0.0, f64::max);
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let r = if i < rows && j < cols { rewards[i][j] } else { 0.0 };
                    max - r
                })
                .collect()
        })
        .collect();
    let col_of_row = lexicographic_min(&cost);

    let mut pairs = Vec::new();
    let mut unmatched_rows = Vec::new();
    let mut col_used = vec![false; cols];
    for (i, &j) in col_of_row.iter().enumerate().take(rows) {
        if j < cols {
            pairs.push((i, j, rewards[i][j]));
            col_used[j] = true;
        } else {
            unmatched_rows.push(i);
        }
    }
    let unmatched_cols = (0..cols).filter(|&j| !col_used[j]).collect();
    Ok(IndexAssignment {
        pairs,
        unmatched_rows,
        unmatched_cols,
    })
}
