//! Residuals of the standard, monotone and hybrid Monge-Ampère schemes.
//!
//! * standard: determinant of the centred-difference Hessian;
//! * monotone: `min` over orthogonal stencil bases of `∏ (D_νν u)⁺`;
//! * hybrid: `w·standard + (1−w)·monotone` with an a-priori weight `w`
//!   that vanishes near where the solution may be singular.
//!
//! Residuals are stored per interior unknown (see [`InteriorMap`]).

use serde::{Deserialize, Serialize};

use crate::error::{MaError, Result};
use crate::grid::{GridFunction, GridSpec, InteriorMap};
use crate::problems::{det, Problem};
use crate::stencil::{BoundaryTrace, StencilBasisSet, StencilTable};

const TIE_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Standard,
    Monotone,
    Hybrid,
}

impl std::str::FromStr for Scheme {
    type Err = MaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Scheme::Standard),
            "monotone" => Ok(Scheme::Monotone),
            "hybrid" => Ok(Scheme::Hybrid),
            other => Err(MaError::Config(format!("unknown scheme `{other}`"))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Standard => "standard",
            Scheme::Monotone => "monotone",
            Scheme::Hybrid => "hybrid",
        })
    }
}

/// Scheme value minus `f` at each interior unknown, with the bookkeeping
/// needed to linearize the monotone part.
#[derive(Debug, Clone)]
pub struct Residual {
    /// `F[u] − f`.
    pub values: Vec<f64>,
    /// `F[u]`.
    pub scheme_values: Vec<f64>,
    /// Index of the minimizing basis (monotone and hybrid only).
    pub active_basis: Vec<u32>,
    /// Bit `j` set when direction `j` of the active basis was clamped (`D ≤ 0`).
    pub active_clamp: Vec<u8>,
    /// Second differences along the active basis directions.
    pub active_diffs: Vec<[f64; 3]>,
}

impl Residual {
    pub fn max_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_grid_function(&self, grid: &GridSpec, map: &InteriorMap) -> GridFunction {
        GridFunction::from_interior(*grid, map, &self.values)
    }
}

/// Centred-difference Hessian at a point with all neighbours on the lattice.
pub fn discrete_hessian(u: &GridFunction, point: usize) -> [[f64; 3]; 3] {
    let grid = u.grid();
    let v = u.values();
    let dim = grid.dim();
    let n = grid.n();
    let stride = [1usize, n, n * n];
    let ih2 = 1.0 / (grid.h() * grid.h());
    let mut hess = [[0.0; 3]; 3];
    let c = v[point];
    for a in 0..dim {
        let sa = stride[a];
        hess[a][a] = (v[point + sa] + v[point - sa] - 2.0 * c) * ih2;
        for b in 0..a {
            let sb = stride[b];
            let m = (v[point + sa + sb] + v[point - sa - sb] - v[point + sa - sb] - v[point - sa + sb])
                * 0.25
                * ih2;
            hess[a][b] = m;
            hess[b][a] = m;
        }
    }
    hess
}

/// Standard scheme: `det` of the discrete Hessian minus `f`.
pub fn residual_standard(u: &GridFunction, f: &GridFunction, map: &InteriorMap) -> Residual {
    let dim = u.grid().dim();
    let mut values = Vec::with_capacity(map.len());
    let mut scheme_values = Vec::with_capacity(map.len());
    for &p in map.points() {
        let s = det(&discrete_hessian(u, p), dim);
        scheme_values.push(s);
        values.push(s - f.values()[p]);
    }
    Residual {
        values,
        scheme_values,
        active_basis: Vec::new(),
        active_clamp: Vec::new(),
        active_diffs: Vec::new(),
    }
}

/// Orthogonal bases together with precomputed arm pairs for a grid.
#[derive(Debug, Clone)]
pub struct MonotoneOperator {
    pub bases: StencilBasisSet,
    pub table: StencilTable,
    pub map: InteriorMap,
}

impl MonotoneOperator {
    pub fn new(grid: &GridSpec, bases: StencilBasisSet, trace: &BoundaryTrace) -> Result<Self> {
        if bases.dim != grid.dim() {
            return Err(MaError::Config(format!(
                "{}-dimensional stencil on a {}-dimensional grid",
                bases.dim,
                grid.dim()
            )));
        }
        let map = InteriorMap::new(grid);
        let table = StencilTable::new(grid, &map, &bases.directions, trace);
        Ok(Self { bases, table, map })
    }

    /// Second differences along every stencil direction at interior unknown `k`.
    pub fn directional_diffs(&self, u: &[f64], k: usize, out: &mut Vec<f64>) {
        let p = self.map.points()[k];
        out.clear();
        out.extend((0..self.bases.directions.len()).map(|d| self.table.pair(k, d).apply(u, p)));
    }

    /// `∏ (D_νν u)⁺` for every basis at interior unknown `k`.
    pub fn basis_products(&self, u: &GridFunction, k: usize) -> Vec<f64> {
        let mut diffs = Vec::new();
        self.directional_diffs(u.values(), k, &mut diffs);
        self.bases
            .bases
            .iter()
            .map(|b| b.iter().map(|&d| diffs[d].max(0.0)).product())
            .collect()
    }
}

/// Monotone scheme: `min` over bases of `∏ (D_νν u)⁺`, minus `f`.
///
/// Ties are resolved in favour of the lowest basis index; products within
/// a relative `1e-12` of the minimum count as tied, so round-off does not
/// flip the active basis.
pub fn residual_monotone(u: &GridFunction, f: &GridFunction, op: &MonotoneOperator) -> Residual {
    let m = op.map.len();
    let mut values = Vec::with_capacity(m);
    let mut scheme_values = Vec::with_capacity(m);
    let mut active_basis = Vec::with_capacity(m);
    let mut active_clamp = Vec::with_capacity(m);
    let mut active_diffs = Vec::with_capacity(m);
    let mut diffs = Vec::with_capacity(op.bases.directions.len());
    let mut products = Vec::with_capacity(op.bases.bases.len());
    for (k, &p) in op.map.points().iter().enumerate() {
        op.directional_diffs(u.values(), k, &mut diffs);
        products.clear();
        products.extend(
            op.bases
                .bases
                .iter()
                .map(|basis| basis.iter().map(|&d| diffs[d].max(0.0)).product::<f64>()),
        );
        let best = products.iter().copied().fold(f64::INFINITY, f64::min);
        let cutoff = best + TIE_RTOL * best.abs();
        let best_idx = products.iter().position(|&v| v <= cutoff).unwrap_or(0);
        let basis = &op.bases.bases[best_idx];
        let mut clamp = 0u8;
        let mut ad = [0.0; 3];
        for (j, &d) in basis.iter().enumerate() {
            ad[j] = diffs[d];
            if diffs[d] <= 0.0 {
                clamp |= 1 << j;
            }
        }
        scheme_values.push(best);
        values.push(best - f.values()[p]);
        active_basis.push(best_idx as u32);
        active_clamp.push(clamp);
        active_diffs.push(ad);
    }
    Residual {
        values,
        scheme_values,
        active_basis,
        active_clamp,
        active_diffs,
    }
}

/// A-priori blending weight of the hybrid scheme.
#[derive(Debug, Clone)]
pub struct WeightField {
    /// Values in `[0,1]`; 1 selects the standard scheme.
    pub w: GridFunction,
    /// Points in the neighbourhood of the possible singular set.
    pub singular_mask: Vec<bool>,
}

impl WeightField {
    /// Constant weight with an empty singular set (testing and endpoint cases).
    pub fn constant(grid: &GridSpec, value: f64) -> Self {
        let mut w = GridFunction::zeros(*grid);
        w.values_mut().iter_mut().for_each(|v| *v = value);
        Self {
            w,
            singular_mask: vec![false; grid.len()],
        }
    }
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Weight field from the problem data.
///
/// The singular set holds interior points with `f ≤ eps` or `f ≥ 1/eps`,
/// every boundary point of the box (its faces are flat), and boundary
/// points on faces flagged non-smooth. With `d` the distance to that set,
/// `w = s((d − h)/(ramp·h))` for the cubic smoothstep `s` clamped to `[0,1]`.
pub fn weight_field(problem: &Problem, grid: &GridSpec, eps: f64, ramp: f64) -> Result<WeightField> {
    if !(eps > 0.0) {
        return Err(MaError::Config(format!("weight threshold must be positive, got {eps}")));
    }
    if !(ramp > 0.0) {
        return Err(MaError::Config(format!("ramp width must be positive, got {ramp}")));
    }
    let f = problem.rhs_on(grid)?;
    let mut singular = vec![false; grid.len()];
    for (p, s) in singular.iter_mut().enumerate() {
        *s = if grid.is_boundary(p) {
            // Every face of the box is flat, which already covers points
            // whose data is flagged non-smooth.
            true
        } else {
            let v = f.values()[p];
            v <= eps || v >= 1.0 / eps
        };
    }
    let h = grid.h();
    let reach = 1.0 + ramp;
    let window = reach.ceil() as i64 + 1;
    let dim = grid.dim();
    let mut w = GridFunction::zeros(*grid);
    for p in 0..grid.len() {
        if singular[p] {
            continue;
        }
        let m = grid.multi(p);
        let mut best = f64::INFINITY;
        let (wz0, wz1) = if dim == 3 { (-window, window) } else { (0, 0) };
        for dz in wz0..=wz1 {
            for dy in -window..=window {
                for dx in -window..=window {
                    let q = [m[0] as i64 + dx, m[1] as i64 + dy, m[2] as i64 + dz];
                    if let Some(qf) = grid.checked_flat(q) {
                        if singular[qf] {
                            let d2 = (dx * dx + dy * dy + dz * dz) as f64;
                            best = best.min(d2.sqrt() * h);
                        }
                    }
                }
            }
        }
        let t = if best.is_finite() {
            (best - h) / (ramp * h)
        } else {
            1.0
        };
        w.values_mut()[p] = smoothstep(t);
    }
    Ok(WeightField {
        w,
        singular_mask: singular,
    })
}

/// Hybrid scheme: pointwise blend of the standard and monotone values.
pub fn residual_hybrid(
    u: &GridFunction,
    f: &GridFunction,
    op: &MonotoneOperator,
    weights: &WeightField,
) -> Residual {
    let standard = residual_standard(u, f, &op.map);
    blend(&standard, residual_monotone(u, f, op), op, weights, f)
}

/// Combine a standard and a monotone residual evaluated at the same iterate.
pub fn blend(
    standard: &Residual,
    mut monotone: Residual,
    op: &MonotoneOperator,
    weights: &WeightField,
    f: &GridFunction,
) -> Residual {
    for (k, &p) in op.map.points().iter().enumerate() {
        let w = weights.w.values()[p];
        let s = w * standard.scheme_values[k] + (1.0 - w) * monotone.scheme_values[k];
        monotone.scheme_values[k] = s;
        monotone.values[k] = s - f.values()[p];
    }
    monotone
}
