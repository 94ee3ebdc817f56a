//! Rectangular linear assignment with forbidden cells.
//!
//! Solves for the largest set of finite-cost cells (one per row and column)
//! and, among those, the minimum total cost. Ties are broken towards the
//! lexicographically smallest `(row, col)` sequence.

/// Dense row-major cost matrix. Non-finite cells are forbidden.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, fill: f64) -> Self {
        CostMatrix {
            rows,
            cols,
            data: vec![fill; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged cost matrix");
        CostMatrix {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        }
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

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Sum of the given cells.
    pub fn total(&self, pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(r, c)| self.get(r, c)).sum()
    }
}

struct Solution {
    row_to_col: Vec<usize>,
    u: Vec<f64>,
    v: Vec<f64>,
    total: f64,
}

/// Shortest-augmenting-path Hungarian method on a square matrix.
fn hungarian(a: &[f64], n: usize) -> Solution {
    // 1-based bookkeeping; index 0 is the virtual root column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = a[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
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
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    let total = (0..n).map(|r| a[r * n + row_to_col[r]]).sum();
    Solution {
        row_to_col,
        u: u[1..].to_vec(),
        v: v[1..].to_vec(),
        total,
    }
}

/// Returns the chosen `(row, col)` pairs sorted by row.
pub fn solve_assignment(cost: &CostMatrix) -> Vec<(usize, usize)> {
    let (rows, cols) = (cost.rows, cost.cols);
    let finite: Vec<f64> = cost.data.iter().copied().filter(|c| c.is_finite()).collect();
    if finite.is_empty() {
        return Vec::new();
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = rows.max(cols);
    // Leaving one more row unmatched must always cost more than any spread of finite costs.
    let big = (hi - lo) * n as f64 + 1.0;
    let forbid = 2.0 * big * n as f64 + 1.0;
    let tol = 1e-10 * big * n as f64;

    let real = |r: usize, c: usize| r < rows && c < cols && cost.get(r, c).is_finite();
    let mut padded = vec![big; n * n];
    for r in 0..rows {
        for c in 0..cols {
            let x = cost.get(r, c);
            if x.is_finite() {
                padded[r * n + c] = x - lo;
            }
        }
    }

    let mut sol = hungarian(&padded, n);
    let optimum = sol.total;

    for r in 0..rows {
        let current = sol.row_to_col[r];
        let limit = if real(r, current) { current } else { cols };
        for c in 0..limit {
            if !real(r, c) {
                continue;
            }
            let reduced = padded[r * n + c] - sol.u[r] - sol.v[c];
            if reduced > tol {
                continue;
            }
            let mut trial = padded.clone();
            pin(&mut trial, n, r, c, forbid);
            let candidate = hungarian(&trial, n);
            if (candidate.total - optimum).abs() <= tol {
                padded = trial;
                sol = candidate;
                break;
            }
        }
        let chosen = sol.row_to_col[r];
        if real(r, chosen) {
            pin(&mut padded, n, r, chosen, forbid);
        } else {
            for c in 0..cols {
                if real(r, c) {
                    padded[r * n + c] = forbid;
                }
            }
        }
    }

    (0..rows)
        .filter_map(|r| {
            let c = sol.row_to_col[r];
            real(r, c).then_some((r, c))
        })
        .collect()
}

fn pin(m: &mut [f64], n: usize, r: usize, c: usize, forbid: f64) {
    for j in 0..n {
        if j != c {
            m[r * n + j] = forbid;
        }
    }
    for i in 0..n {
        if i != r {
            m[i * n + c] = forbid;
        }
    }
}
