//! Minimum-cost rectangular assignment (Kuhn–Munkres with potentials).

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AssignmentError {
    #[error("cost matrix entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("cost matrix data has {got} entries, expected {rows}x{cols}")]
    Shape { rows: usize, cols: usize, got: usize },
}

/// Dense row-major cost matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AssignmentError> {
        if data.len() != rows * cols {
            return Err(AssignmentError::Shape {
                rows,
                cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AssignmentError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(AssignmentError::Shape {
                    rows: rows.len(),
                    cols,
                    got: data.len() + r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// One-to-one pairing between rows (predictions) and columns (ground truth).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchResult {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

impl MatchResult {
    /// Builds the complement lists from a set of pairs.
    pub fn from_pairs(mut pairs: Vec<(usize, usize)>, rows: usize, cols: usize) -> Self {
        pairs.sort_unstable();
        let mut row_used = vec![false; rows];
        let mut col_used = vec![false; cols];
        for &(r, c) in &pairs {
            row_used[r] = true;
            col_used[c] = true;
        }
        Self {
            pairs,
            unmatched_rows: (0..rows).filter(|&r| !row_used[r]).collect(),
            unmatched_cols: (0..cols).filter(|&c| !col_used[c]).collect(),
        }
    }

    /// Sum of the matched entries of `cost`, accumulated in row order.
    pub fn total_cost(&self, cost: &CostMatrix) -> f64 {
        self.pairs.iter().map(|&(r, c)| cost.get(r, c)).sum()
    }

    pub fn col_for_row(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == row).map(|p| p.1)
    }
}

/// Minimum-total-cost assignment of `min(rows, cols)` pairs.
///
/// Rows are inserted in ascending order and each augmenting search scans
/// columns in ascending order, keeping the first strict minimum, so equal-cost
/// alternatives resolve toward lower indices deterministically.
pub fn hungarian(cost: &CostMatrix) -> Result<MatchResult, AssignmentError> {
    for (k, v) in cost.data.iter().enumerate() {
        if !v.is_finite() {
            return Err(AssignmentError::NonFinite {
                row: k / cost.cols.max(1),
                col: k % cost.cols.max(1),
            });
        }
    }
    let (n, m) = (cost.rows, cost.cols);
    if n == 0 || m == 0 {
        return Ok(MatchResult::from_pairs(Vec::new(), n, m));
    }
    let pairs = if n <= m {
        solve(n, m, |i, j| cost.get(i, j))
    } else {
        solve(m, n, |i, j| cost.get(j, i))
            .into_iter()
            .map(|(c, r)| (r, c))
            .collect()
    };
    Ok(MatchResult::from_pairs(pairs, n, m))
}

/// Shortest augmenting path with dual potentials; requires `n <= m`.
fn solve(n: usize, m: usize, a: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    // 1-based internally; index 0 is the virtual root
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
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
    (1..=m)
        .filter(|&j| p[j] != 0)
        .map(|j| (p[j] - 1, j - 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_examples() {
        let c = CostMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let r = hungarian(&c).unwrap();
        assert_eq!(r.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(r.total_cost(&c), 0.0);
        let c = CostMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let r = hungarian(&c).unwrap();
        assert_eq!(r.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(r.total_cost(&c), 2.0);
    }

    #[test]
    fn rectangular_both_ways() {
        let c = CostMatrix::from_rows(&[vec![5.0, 1.0, 3.0]]).unwrap();
        let r = hungarian(&c).unwrap();
        assert_eq!(r.pairs, vec![(0, 1)]);
        assert_eq!(r.unmatched_cols, vec![0, 2]);
        let c = CostMatrix::from_rows(&[vec![5.0], vec![1.0], vec![3.0]]).unwrap();
        let r = hungarian(&c).unwrap();
        assert_eq!(r.pairs, vec![(1, 0)]);
        assert_eq!(r.unmatched_rows, vec![0, 2]);
    }

    #[test]
    fn ties_prefer_low_indices() {
        let c = CostMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(hungarian(&c).unwrap().pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn rejects_nan() {
        let c = CostMatrix::from_rows(&[vec![1.0, f64::NAN]]).unwrap();
        assert_eq!(hungarian(&c), Err(AssignmentError::NonFinite { row: 0, col: 1 }));
    }

    #[test]
    fn empty_is_empty() {
        let c = CostMatrix::new(0, 3, vec![]).unwrap();
        let r = hungarian(&c).unwrap();
        assert!(r.pairs.is_empty());
        assert_eq!(r.unmatched_cols, vec![0, 1, 2]);
    }
}
