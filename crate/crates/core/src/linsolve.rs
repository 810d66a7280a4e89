//! Sparse linear solves and the Dirichlet Poisson problem.
//!
//! Systems are factorized with faer's sparse LU (fill-reducing column
//! ordering, partial pivoting). Each solve is followed by a residual check
//! with our own matrix-vector product and, if needed, a few steps of
//! iterative refinement against the same factors.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::Col;
use serde::Serialize;

use crate::error::{MaError, Result};
use crate::grid::{GridFunction, GridSpec, InteriorMap};
use crate::linearization::SparseMatrix;

pub const DEFAULT_TOL: f64 = 1e-10;
const MAX_REFINEMENT: usize = 3;

#[derive(Debug, Clone, Serialize)]
pub struct LinearSolveReport {
    pub method: &'static str,
    /// Refinement steps after the initial triangular solves.
    pub iterations: usize,
    pub relative_residual: f64,
    pub success: bool,
}

/// Reusable LU factors of a square sparse matrix.
pub struct Factorization {
    lu: Lu<usize, f64>,
    n: usize,
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorization").field("n", &self.n).finish()
    }
}

pub fn factorize(a: &SparseMatrix) -> Result<Factorization> {
    if a.n_rows() != a.n_cols() {
        return Err(MaError::LinearSolve(format!(
            "matrix is {}x{}, expected square",
            a.n_rows(),
            a.n_cols()
        )));
    }
    let triplets: Vec<Triplet<usize, usize, f64>> =
        a.triplets().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(a.n_rows(), a.n_cols(), &triplets)
        .map_err(|e| MaError::LinearSolve(format!("{e:?}")))?;
    // faer panics on an exactly zero pivot instead of returning an error
    let lu = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| mat.sp_lu()))
        .map_err(|_| MaError::LinearSolve("matrix is numerically singular".into()))?
        .map_err(|e| MaError::LinearSolve(format!("factorization failed: {e:?}")))?;
    Ok(Factorization { lu, n: a.n_rows() })
}

impl Factorization {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = Col::<f64>::from_fn(self.n, |i| b[i]);
        let x = self.lu.solve(&rhs);
        (0..self.n).map(|i| x[i]).collect()
    }

    /// Solve, verify against `a`, and refine if the residual exceeds `tol`.
    pub fn solve_checked(&self, a: &SparseMatrix, b: &[f64], tol: f64) -> (Vec<f64>, LinearSolveReport) {
        let bnorm = norm2(b);
        if bnorm == 0.0 {
            return (
                vec![0.0; self.n],
                LinearSolveReport {
                    method: "sparse-lu",
                    iterations: 0,
                    relative_residual: 0.0,
                    success: true,
                },
            );
        }
        let mut x = self.solve(b);
        let mut rel = relative_residual(a, &x, b, bnorm);
        let mut iterations = 0;
        while !(rel <= tol) && iterations < MAX_REFINEMENT && rel.is_finite() {
            let ax = a.matvec(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            let dx = self.solve(&r);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
            rel = relative_residual(a, &x, b, bnorm);
            iterations += 1;
        }
        let success = rel <= tol && x.iter().all(|v| v.is_finite());
        (
            x,
            LinearSolveReport {
                method: "sparse-lu",
                iterations,
                relative_residual: rel,
                success,
            },
        )
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn relative_residual(a: &SparseMatrix, x: &[f64], b: &[f64], bnorm: f64) -> f64 {
    if x.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let ax = a.matvec(x);
    let r: f64 = b.iter().zip(&ax).map(|(bi, ai)| (bi - ai) * (bi - ai)).sum::<f64>().sqrt();
    r / bnorm
}

/// Solve `A x = b` to relative residual `tol`. A failed factorization or an
/// unmet tolerance is reported through `success = false`.
pub fn solve_linear_tol(a: &SparseMatrix, b: &[f64], tol: f64) -> (Vec<f64>, LinearSolveReport) {
    assert_eq!(b.len(), a.n_rows(), "right-hand side length mismatch");
    match factorize(a) {
        Ok(f) => f.solve_checked(a, b, tol),
        Err(_) => (
            vec![f64::NAN; a.n_cols()],
            LinearSolveReport {
                method: "sparse-lu",
                iterations: 0,
                relative_residual: f64::INFINITY,
                success: false,
            },
        ),
    }
}

pub fn solve_linear(a: &SparseMatrix, b: &[f64]) -> (Vec<f64>, LinearSolveReport) {
    solve_linear_tol(a, b, DEFAULT_TOL)
}

/// Standard 5-point (2D) or 7-point (3D) Laplacian over interior unknowns.
pub fn laplacian(grid: &GridSpec, map: &InteriorMap) -> SparseMatrix {
    let n = grid.n();
    let strides = [1usize, n, n * n];
    let dim = grid.dim();
    let ih2 = 1.0 / (grid.h() * grid.h());
    SparseMatrix::build(map.len(), map.len(), |k, row| {
        let p = map.points()[k];
        row.add(k, -2.0 * dim as f64 * ih2);
        for &s in &strides[..dim] {
            for q in [p + s, p - s] {
                if let Some(c) = map.unknown(q) {
                    row.add(c, ih2);
                }
            }
        }
    })
}

/// Dirichlet Poisson solver with a cached factorization of the Laplacian.
#[derive(Debug)]
pub struct PoissonSolver {
    grid: GridSpec,
    map: InteriorMap,
    matrix: SparseMatrix,
    factors: Factorization,
}

impl PoissonSolver {
    pub fn new(grid: &GridSpec) -> Result<Self> {
        let map = InteriorMap::new(grid);
        let matrix = laplacian(grid, &map);
        let factors = factorize(&matrix)?;
        Ok(Self {
            grid: *grid,
            map,
            matrix,
            factors,
        })
    }

    /// Solve `Δu = rhs` inside with `u = boundary` on the boundary.
    /// Only interior entries of `rhs` and boundary entries of `boundary` are read.
    pub fn solve(&self, rhs: &GridFunction, boundary: &GridFunction) -> Result<GridFunction> {
        let grid = &self.grid;
        let n = grid.n();
        let strides = [1usize, n, n * n];
        let ih2 = 1.0 / (grid.h() * grid.h());
        let bv = boundary.values();
        let mut b = Vec::with_capacity(self.map.len());
        for &p in self.map.points() {
            let mut v = rhs.values()[p];
            for &s in &strides[..grid.dim()] {
                for q in [p + s, p - s] {
                    if self.map.unknown(q).is_none() {
                        v -= bv[q] * ih2;
                    }
                }
            }
            b.push(v);
        }
        let (x, report) = self.factors.solve_checked(&self.matrix, &b, DEFAULT_TOL);
        if !report.success {
            return Err(MaError::LinearSolve(format!(
                "Poisson solve residual {:e}",
                report.relative_residual
            )));
        }
        let mut u = boundary.clone();
        for (k, &p) in self.map.points().iter().enumerate() {
            u.values_mut()[p] = x[k];
        }
        Ok(u)
    }
}

pub fn solve_poisson(grid: &GridSpec, rhs: &GridFunction, boundary: &GridFunction) -> Result<GridFunction> {
    PoissonSolver::new(grid)?.solve(rhs, boundary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn identity_solve() {
        let b = vec![1.0, -2.0, 3.5];
        let (x, r) = solve_linear(&SparseMatrix::identity(3), &b);
        assert!(r.success);
        assert_eq!(x, b);
    }

    #[test]
    fn laplacian_constructed_solution() {
        let g = GridSpec::new(2, 31).unwrap();
        let map = InteriorMap::new(&g);
        let a = laplacian(&g, &map);
        let ones = vec![1.0; map.len()];
        let b = a.matvec(&ones);
        let (x, r) = solve_linear(&a, &b);
        assert!(r.success, "{r:?}");
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-8));
    }

    /// Dense Gaussian elimination with partial pivoting.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
            x[i] = (b[i] - s) / a[i][i];
        }
        x
    }

    #[test]
    fn random_diagonally_dominant_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100;
        let mut trip = Vec::new();
        for i in 0..n {
            let mut off = 0.0;
            for _ in 0..6 {
                let j = rng.gen_range(0..n);
                if j != i {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    off += v.abs();
                    trip.push((i, j, v));
                }
            }
            trip.push((i, i, off + rng.gen_range(0.5..2.0)));
        }
        let a = SparseMatrix::from_triplets(n, n, &trip);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (x, r) = solve_linear(&a, &b);
        assert!(r.success);
        let xd = dense_solve(a.to_dense(), b.clone());
        for (p, q) in x.iter().zip(&xd) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_system_reports_failure() {
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        let (_, r) = solve_linear(&a, &[1.0, 2.0]);
        assert!(!r.success);
    }

    #[test]
    fn poisson_harmonic_and_constant() {
        let g = GridSpec::new(2, 21).unwrap();
        let zero = GridFunction::zeros(g);
        let harm = sample(&g, |x| x[0] * x[0] - x[1] * x[1]).unwrap();
        let u = solve_poisson(&g, &zero, &harm).unwrap();
        for (a, b) in u.values().iter().zip(harm.values()) {
            assert!((a - b).abs() < 1e-10);
        }
        let c = sample(&g, |_| 2.5).unwrap();
        let u = solve_poisson(&g, &zero, &c).unwrap();
        assert!(u.values().iter().all(|v| (v - 2.5).abs() < 1e-10));
    }

    #[test]
    fn poisson_second_order() {
        let mut errs = Vec::new();
        for n in [17, 33] {
            let g = GridSpec::new(2, n).unwrap();
            let rhs = sample(&g, |x| -2.0 * PI * PI * (PI * x[0]).sin() * (PI * x[1]).sin()).unwrap();
            let u = solve_poisson(&g, &rhs, &GridFunction::zeros(g)).unwrap();
            let e = sample(&g, |x| (PI * x[0]).sin() * (PI * x[1]).sin()).unwrap();
            let err = u.values().iter().zip(e.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            errs.push(err);
        }
        assert!(errs[0] < 5e-3);
        let rate = (errs[0] / errs[1]).log2();
        assert!((rate - 2.0).abs() < 0.2, "rate {rate}");
    }

    #[test]
    fn poisson_3d_and_maximum_principle() {
        let g = GridSpec::new(3, 9).unwrap();
        let rhs = sample(&g, |x| 1.0 + x[0]).unwrap();
        let bdry = sample(&g, |x| x[1] - 0.3 * x[2]).unwrap();
        let u = solve_poisson(&g, &rhs, &bdry).unwrap();
        let bmax = (0..g.len()).filter(|&p| g.is_boundary(p)).map(|p| bdry.values()[p]).fold(f64::MIN, f64::max);
        let imax = (0..g.len()).filter(|&p| !g.is_boundary(p)).map(|p| u.values()[p]).fold(f64::MIN, f64::max);
        assert!(imax <= bmax + 1e-12);
    }
}
