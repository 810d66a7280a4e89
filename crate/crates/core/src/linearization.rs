//! Sparse Jacobians of the discrete Monge-Ampère operators.
//!
//! Unknowns are the interior lattice points; boundary values are data, so
//! their columns are dropped.

use std::io::Write;

use crate::discretization::{discrete_hessian, MonotoneOperator, Residual, WeightField};
use crate::error::Result;
use crate::grid::{GridFunction, InteriorMap};

/// Row-compressed real matrix with sorted, unique column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Accumulates one row, merging repeated columns.
#[derive(Debug, Default)]
pub struct RowBuilder {
    entries: Vec<(usize, f64)>,
}

impl RowBuilder {
    #[inline]
    pub fn add(&mut self, col: usize, value: f64) {
        self.entries.push((col, value));
    }

    fn drain_into(&mut self, cols: &mut Vec<usize>, vals: &mut Vec<f64>) {
        self.entries.sort_unstable_by_key(|e| e.0);
        let mut iter = self.entries.drain(..);
        if let Some((mut c, mut v)) = iter.next() {
            for (c2, v2) in iter {
                if c2 == c {
                    v += v2;
                } else {
                    cols.push(c);
                    vals.push(v);
                    c = c2;
                    v = v2;
                }
            }
            cols.push(c);
            vals.push(v);
        }
    }
}

impl SparseMatrix {
    /// Build row by row; `fill(i, row)` adds the entries of row `i`.
    pub fn build<F>(n_rows: usize, n_cols: usize, mut fill: F) -> Self
    where
        F: FnMut(usize, &mut RowBuilder),
    {
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut row = RowBuilder::default();
        row_ptr.push(0);
        for i in 0..n_rows {
            fill(i, &mut row);
            row.drain_into(&mut col_idx, &mut values);
            row_ptr.push(col_idx.len());
        }
        Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut by_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_rows];
        for &(r, c, v) in triplets {
            by_row[r].push((c, v));
        }
        Self::build(n_rows, n_cols, |i, row| {
            for &(c, v) in &by_row[i] {
                row.add(c, v);
            }
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::build(n, n, |i, row| row.add(i, 1.0))
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map(|k| vals[k]).unwrap_or(0.0)
    }

    /// Iterate `(row, col, value)` over stored entries.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&c, &v)| (i, c, v))
        })
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols, "matvec dimension mismatch");
        (0..self.n_rows)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum()
            })
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (i, j, v) in self.triplets() {
            out[i][j] = v;
        }
        out
    }

    /// Row `i` of the result is `w[i]·a_i + (1 − w[i])·b_i`.
    pub fn blend_rows(a: &SparseMatrix, b: &SparseMatrix, w: &[f64]) -> SparseMatrix {
        assert_eq!(a.n_rows, b.n_rows);
        assert_eq!(a.n_cols, b.n_cols);
        SparseMatrix::build(a.n_rows, a.n_cols, |i, row| {
            let wi = w[i];
            if wi != 0.0 {
                let (c, v) = a.row(i);
                for (&c, &v) in c.iter().zip(v) {
                    row.add(c, wi * v);
                }
            }
            if wi != 1.0 {
                let (c, v) = b.row(i);
                for (&c, &v) in c.iter().zip(v) {
                    row.add(c, (1.0 - wi) * v);
                }
            }
        })
    }

    /// Dump in `row col value` text format, one stored entry per line.
    pub fn write_coo<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "% {} {} {}", self.n_rows, self.n_cols, self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(out, "{i} {j} {v:e}")?;
        }
        Ok(())
    }
}

fn adjugate(m: &[[f64; 3]; 3], dim: usize) -> [[f64; 3]; 3] {
    let mut adj = [[0.0; 3]; 3];
    if dim == 2 {
        adj[0][0] = m[1][1];
        adj[1][1] = m[0][0];
        adj[0][1] = -m[0][1];
        adj[1][0] = -m[1][0];
    } else {
        for i in 0..3 {
            for j in 0..3 {
                // cofactor C_ji
                let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
                let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
                adj[i][j] = m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
            }
        }
    }
    adj
}

/// Jacobian of the standard scheme: `v ↦ tr(adj(D²u) D²v)` with the
/// adjugate frozen at `u`. In 2D this is
/// `(Dxx u) Dyy + (Dyy u) Dxx − 2 (Dxy u) Dxy`.
pub fn jacobian_standard(u: &GridFunction, map: &InteriorMap) -> SparseMatrix {
    let grid = *u.grid();
    let dim = grid.dim();
    let n = grid.n();
    let stride = [1usize, n, n * n];
    let ih2 = 1.0 / (grid.h() * grid.h());
    let m = map.len();
    SparseMatrix::build(m, m, |k, row| {
        let p = map.points()[k];
        let adj = adjugate(&discrete_hessian(u, p), dim);
        let mut put = |q: usize, v: f64| {
            if let Some(c) = map.unknown(q) {
                row.add(c, v);
            }
        };
        for a in 0..dim {
            let c = adj[a][a] * ih2;
            put(p + stride[a], c);
            put(p - stride[a], c);
            put(p, -2.0 * c);
            for b in 0..a {
                // adj is symmetric; both off-diagonal entries hit D_ab
                let c = 2.0 * adj[a][b] * 0.25 * ih2;
                let (sa, sb) = (stride[a], stride[b]);
                put(p + sa + sb, c);
                put(p - sa - sb, c);
                put(p + sa - sb, -c);
                put(p - sa + sb, -c);
            }
        }
    })
}

/// Jacobian of the monotone scheme at the active bases recorded in `residual`.
///
/// Row `k` is `Σ_j c_j · D_{ν_j ν_j}` with `c_j = ∏_{l≠j} max(D_{ν_l ν_l} u, eps_reg)`.
pub fn jacobian_monotone(residual: &Residual, op: &MonotoneOperator, eps_reg: f64) -> SparseMatrix {
    let m = op.map.len();
    let dim = op.bases.dim;
    let map = &op.map;
    SparseMatrix::build(m, m, |k, row| {
        let basis = &op.bases.bases[residual.active_basis[k] as usize];
        let diffs = residual.active_diffs[k];
        for j in 0..dim {
            let cj: f64 = (0..dim)
                .filter(|&l| l != j)
                .map(|l| diffs[l].max(eps_reg))
                .product();
            let pair = op.table.pair(k, basis[j]);
            pair.for_each_neighbor(|q, w| {
                if let Some(c) = map.unknown(q) {
                    row.add(c, cj * w);
                }
            });
            row.add(k, -cj * pair.weights.2);
        }
    })
}

/// Row-wise blend `w·J_standard + (1−w)·J_monotone`.
pub fn jacobian_hybrid(
    standard: &SparseMatrix,
    monotone: &SparseMatrix,
    weights: &WeightField,
    map: &InteriorMap,
) -> SparseMatrix {
    let w: Vec<f64> = map.points().iter().map(|&p| weights.w.values()[p]).collect();
    SparseMatrix::blend_rows(standard, monotone, &w)
}
