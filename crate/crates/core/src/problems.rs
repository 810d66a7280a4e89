//! Catalog of benchmark problems with closed-form data and exact solutions.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MaError, Result};
use crate::grid::{field, sample_interior, Field, GridFunction, GridSpec};

/// Right-hand side `f` of `det(D²u) = f`.
#[derive(Clone)]
pub enum RightHandSide {
    Closed(Field),
    /// Point mass at `x0`, replaced on each grid by its average over the
    /// ball of radius `h/2`.
    Dirac { x0: [f64; 3], mass: f64 },
}

#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub dim: usize,
    pub rhs: RightHandSide,
    /// Dirichlet data.
    pub g: Field,
    pub exact: Option<Field>,
    /// One flag per box face (`2*dim` entries, order `x=0, x=1, y=0, ...`);
    /// `false` marks boundary data that is not `C^{2,α}`.
    pub boundary_smooth: Vec<bool>,
    pub x0: [f64; 3],
    /// Points where the exact solution is smooth enough to differentiate
    /// twice; used to pick consistency samples.
    regular_at: Arc<dyn Fn(&[f64]) -> bool + Send + Sync>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

pub const CATALOG: [&str; 7] = [
    "c2_2d",
    "c1_2d",
    "blowup_2d",
    "cone_2d",
    "c2_3d",
    "c1_3d",
    "blowup_3d",
];

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|c| c * c).sum()
}

fn dist(x: &[f64], x0: &[f64; 3]) -> f64 {
    x.iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

impl Problem {
    fn new(
        name: &str,
        dim: usize,
        rhs: RightHandSide,
        exact: Field,
        regular_at: impl Fn(&[f64]) -> bool + Send + Sync + 'static,
    ) -> Self {
        let x0 = if dim == 2 { [0.5, 0.5, 0.0] } else { [0.5, 0.5, 0.5] };
        Self {
            name: name.to_string(),
            dim,
            rhs,
            g: exact.clone(),
            exact: Some(exact),
            boundary_smooth: vec![true; 2 * dim],
            x0,
            regular_at: Arc::new(regular_at),
        }
    }

    /// Look up a catalog problem by name.
    pub fn by_name(name: &str) -> Result<Self> {
        let x0_2 = [0.5, 0.5, 0.0];
        let x0_3 = [0.5, 0.5, 0.5];
        let p = match name {
            "c2_2d" => Self::new(
                name,
                2,
                RightHandSide::Closed(field(|x| {
                    let r2 = norm_sq(x);
                    (1.0 + r2) * r2.exp()
                })),
                field(|x| (0.5 * norm_sq(x)).exp()),
                |_| true,
            ),
            "c1_2d" => Self::new(
                name,
                2,
                RightHandSide::Closed(field(move |x| (1.0 - 0.2 / dist(x, &x0_2)).max(0.0))),
                field(move |x| {
                    let s = (dist(x, &x0_2) - 0.2).max(0.0);
                    0.5 * s * s
                }),
                move |x| (dist(x, &x0_2) - 0.2).abs() > 0.02,
            ),
            "blowup_2d" => Self::new(
                name,
                2,
                RightHandSide::Closed(field(|x| {
                    let s = 2.0 - norm_sq(x);
                    2.0 / (s * s)
                })),
                field(|x| -(2.0 - norm_sq(x)).max(0.0).sqrt()),
                |x| norm_sq(x) < 1.9,
            ),
            "cone_2d" => Self::new(
                name,
                2,
                RightHandSide::Dirac {
                    x0: x0_2,
                    mass: PI,
                },
                field(move |x| dist(x, &x0_2)),
                move |x| dist(x, &x0_2) > 0.15,
            ),
            "c2_3d" => Self::new(
                name,
                3,
                RightHandSide::Closed(field(|x| {
                    let r2 = norm_sq(x);
                    (1.0 + r2) * (1.5 * r2).exp()
                })),
                field(|x| (0.5 * norm_sq(x)).exp()),
                |_| true,
            ),
            "c1_3d" => Self::new(
                name,
                3,
                RightHandSide::Closed(field(move |x| {
                    let r = dist(x, &x0_3);
                    if r > 0.2 {
                        1.0 - 0.4 / r + 0.04 / (r * r)
                    } else {
                        0.0
                    }
                })),
                field(move |x| {
                    let s = (dist(x, &x0_3) - 0.2).max(0.0);
                    0.5 * s * s
                }),
                move |x| (dist(x, &x0_3) - 0.2).abs() > 0.02,
            ),
            "blowup_3d" => Self::new(
                name,
                3,
                RightHandSide::Closed(field(|x| {
                    let s = 3.0 - norm_sq(x);
                    3.0 * s.powf(-2.5)
                })),
                field(|x| -(3.0 - norm_sq(x)).max(0.0).sqrt()),
                |x| norm_sq(x) < 2.85,
            ),
            _ => return Err(MaError::UnknownProblem(name.to_string())),
        };
        Ok(p)
    }

    /// Pointwise `f`, where it is a function. The Dirac right-hand side is
    /// zero away from its atom.
    pub fn f_at(&self, x: &[f64]) -> f64 {
        match &self.rhs {
            RightHandSide::Closed(f) => f(x),
            RightHandSide::Dirac { x0, .. } => {
                if dist(x, x0) == 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
        }
    }

    pub fn is_grid_dependent(&self) -> bool {
        matches!(self.rhs, RightHandSide::Dirac { .. })
    }

    /// `f` sampled at the interior points of `grid` (boundary entries are zero).
    pub fn rhs_on(&self, grid: &GridSpec) -> Result<GridFunction> {
        self.check_dim(grid)?;
        match &self.rhs {
            RightHandSide::Closed(f) => sample_interior(grid, |x| f(x)),
            RightHandSide::Dirac { x0, mass } => Ok(dirac_approximation(grid, x0, *mass)),
        }
    }

    /// Exact solution sampled at all points of `grid`.
    pub fn exact_on(&self, grid: &GridSpec) -> Option<Result<GridFunction>> {
        self.exact
            .as_ref()
            .map(|u| crate::grid::sample(grid, |x| u(x)))
    }

    /// Grid function equal to `g` on the boundary and zero inside.
    pub fn boundary_on(&self, grid: &GridSpec) -> Result<GridFunction> {
        self.check_dim(grid)?;
        let mut u = GridFunction::zeros(*grid);
        for p in 0..grid.len() {
            if grid.is_boundary(p) {
                let x = grid.coord(p);
                let v = (self.g)(&x[..grid.dim()]);
                if !v.is_finite() {
                    return Err(MaError::NonFinite {
                        index: p,
                        coords: x[..grid.dim()].to_vec(),
                        value: v,
                    });
                }
                u.values_mut()[p] = v;
            }
        }
        Ok(u)
    }

    /// Whether the boundary point lies on a face flagged non-smooth.
    pub fn boundary_point_smooth(&self, grid: &GridSpec, point: usize) -> bool {
        let m = grid.multi(point);
        let top = grid.n() - 1;
        (0..grid.dim()).all(|d| {
            let lo_ok = m[d] != 0 || self.boundary_smooth[2 * d];
            let hi_ok = m[d] != top || self.boundary_smooth[2 * d + 1];
            lo_ok && hi_ok
        })
    }

    fn check_dim(&self, grid: &GridSpec) -> Result<()> {
        if grid.dim() != self.dim {
            return Err(MaError::Config(format!(
                "problem `{}` is {}-dimensional but the grid is {}-dimensional",
                self.name,
                self.dim,
                grid.dim()
            )));
        }
        Ok(())
    }
}

/// Catalog lookup that also checks the grid dimension.
pub fn get_problem(name: &str, grid: &GridSpec) -> Result<Problem> {
    let p = Problem::by_name(name)?;
    p.check_dim(grid)?;
    Ok(p)
}

/// Average of a point mass over the ball of radius `h/2`, sampled on the lattice.
///
/// Every lattice point within `h/2` of `x0` receives `mass / (π (h/2)²)`;
/// with `mass = π` that is `4/h²`. When no lattice point lies that close the
/// result is identically zero.
pub fn dirac_approximation(grid: &GridSpec, x0: &[f64; 3], mass: f64) -> GridFunction {
    let h = grid.h();
    let radius = 0.5 * h;
    let density = mass / (PI * radius * radius);
    let mut out = GridFunction::zeros(*grid);
    for p in 0..grid.len() {
        let x = grid.coord(p);
        if dist(&x[..grid.dim()], x0) <= radius * (1.0 + 1e-12) {
            out.values_mut()[p] = density;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct ConsistencyReport {
    pub problem: String,
    pub samples: usize,
    pub max_relative_error: f64,
}

/// Hessian of `u` at `x` by fourth-order central differences.
pub fn fd_hessian(u: &dyn Fn(&[f64]) -> f64, x: &[f64], step: f64) -> [[f64; 3]; 3] {
    let d = x.len();
    let mut hess = [[0.0; 3]; 3];
    let eval = |offsets: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(i, o) in offsets {
            y[i] += o;
        }
        u(&y)
    };
    let s = step;
    let u0 = u(x);
    for i in 0..d {
        let v = -eval(&[(i, 2.0 * s)]) + 16.0 * eval(&[(i, s)]) - 30.0 * u0 + 16.0 * eval(&[(i, -s)])
            - eval(&[(i, -2.0 * s)]);
        hess[i][i] = v / (12.0 * s * s);
        for j in 0..i {
            let mixed = |t: f64| {
                (eval(&[(i, t), (j, t)]) - eval(&[(i, t), (j, -t)]) - eval(&[(i, -t), (j, t)])
                    + eval(&[(i, -t), (j, -t)]))
                    / (4.0 * t * t)
            };
            let v = (4.0 * mixed(s) - mixed(2.0 * s)) / 3.0;
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    hess
}

pub(crate) fn det(m: &[[f64; 3]; 3], dim: usize) -> f64 {
    if dim == 2 {
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    } else {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }
}

/// Check `det(D²u_exact) = f` at random interior points away from known kinks.
pub fn verify_consistency(problem: &Problem, samples: usize) -> Result<ConsistencyReport> {
    let exact = problem
        .exact
        .as_ref()
        .ok_or_else(|| MaError::Config(format!("problem `{}` has no exact solution", problem.name)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6d61);
    let dim = problem.dim;
    let margin = 0.02;
    let mut worst = 0.0f64;
    let mut taken = 0;
    let mut attempts = 0;
    while taken < samples {
        attempts += 1;
        if attempts > 1000 * samples.max(1) {
            return Err(MaError::Config(format!(
                "could not find regular sample points for `{}`",
                problem.name
            )));
        }
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(margin..1.0 - margin)).collect();
        if !(problem.regular_at)(&x) {
            continue;
        }
        taken += 1;
        let hess = fd_hessian(exact.as_ref(), &x, 1e-3);
        let d = det(&hess, dim);
        let f = problem.f_at(&x);
        let err = (d - f).abs() / f.abs().max(1.0);
        worst = worst.max(err);
        if err > 1e-6 {
            return Err(MaError::Inconsistent {
                problem: problem.name.clone(),
                point: x,
                det: d,
                f,
            });
        }
    }
    Ok(ConsistencyReport {
        problem: problem.name.clone(),
        samples,
        max_relative_error: worst,
    })
}
