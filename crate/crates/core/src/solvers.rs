//! Nonlinear solvers: damped Newton on any scheme, forward Euler on the
//! parabolic form, and the 2D semi-implicit Poisson iteration, plus the
//! Poisson-and-convexify initialization.

use std::time::Instant;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::discretization::{
    blend, discrete_hessian, residual_monotone, residual_standard, weight_field, MonotoneOperator, Residual, Scheme,
    WeightField,
};
use crate::error::{MaError, Result};
use crate::grid::{resample, GridFunction, GridSpec, InteriorMap};
use crate::linearization::{jacobian_hybrid, jacobian_monotone, jacobian_standard, SparseMatrix};
use crate::linsolve::{factorize, PoissonSolver};
use crate::problems::Problem;
use crate::stencil::{build_directions, BoundaryTrace, Direction, DirectionMode, StencilBasisSet, StencilTable};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub scheme: Scheme,
    /// Chebyshev width of the monotone stencil (2 gives 17 points in 2D;
    /// 3D uses axes and face diagonals at width 1, 19 points).
    pub stencil_width: usize,
    pub max_newton_iters: usize,
    /// Stop when the residual max-norm is at most this.
    pub newton_tol: f64,
    /// Smallest step fraction tried by the backtracking line search.
    pub min_damping: f64,
    /// When false, Newton always takes the full step.
    pub line_search: bool,
    /// Jacobian floor for directional second differences; `None` means `1e-8/(2h²)`.
    pub eps_reg: Option<f64>,
    /// Threshold for the singular set; `None` means `h`.
    pub weight_eps: Option<f64>,
    /// Width of the weight transition, in grid spacings.
    pub weight_ramp: f64,
    /// Forward Euler step is `explicit_dt_factor · h²`.
    pub explicit_dt_factor: f64,
    pub explicit_max_iters: usize,
    pub explicit_tol: f64,
    pub semi_implicit_max_iters: usize,
    /// Stop when successive iterates differ by at most this in max-norm.
    pub semi_implicit_tol: f64,
    /// Points per side of the initialization grid (capped at the target
    /// size). `None` initializes on the target grid: interpolating a coarse
    /// iterate leaves the discrete Hessian indefinite at many points.
    pub coarse_n: Option<usize>,
    /// Lower bound imposed on every directional second difference of the
    /// initial iterate; 0 gives the plain convex envelope.
    pub init_modulus: f64,
    /// A trial step may not exceed the largest of this many most recent
    /// residual norms.
    pub nonmonotone_memory: usize,
    pub linear_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Hybrid,
            stencil_width: 2,
            max_newton_iters: 100,
            newton_tol: 1e-8,
            min_damping: 1.0 / 1024.0,
            line_search: true,
            eps_reg: None,
            weight_eps: None,
            weight_ramp: 2.0,
            explicit_dt_factor: 0.02,
            explicit_max_iters: 500_000,
            explicit_tol: 1e-8,
            semi_implicit_max_iters: 500,
            semi_implicit_tol: 1e-8,
            coarse_n: None,
            init_modulus: 0.5,
            nonmonotone_memory: 5,
            linear_tol: crate::linsolve::DEFAULT_TOL,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("newton_tol", self.newton_tol),
            ("weight_ramp", self.weight_ramp),
            ("explicit_dt_factor", self.explicit_dt_factor),
            ("explicit_tol", self.explicit_tol),
            ("semi_implicit_tol", self.semi_implicit_tol),
            ("linear_tol", self.linear_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(MaError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.min_damping > 0.0 && self.min_damping <= 1.0) {
            return Err(MaError::Config(format!(
                "min_damping must lie in (0, 1], got {}",
                self.min_damping
            )));
        }
        if let Some(e) = self.eps_reg {
            if !(e > 0.0) {
                return Err(MaError::Config(format!("eps_reg must be positive, got {e}")));
            }
        }
        if self.nonmonotone_memory == 0 {
            return Err(MaError::Config("nonmonotone_memory must be at least 1".into()));
        }
        if !(self.init_modulus >= 0.0) {
            return Err(MaError::Config(format!("init_modulus must be nonnegative, got {}", self.init_modulus)));
        }
        if self.stencil_width == 0 {
            return Err(MaError::Config("stencil_width must be at least 1".into()));
        }
        if self.coarse_n.is_some_and(|c| c < 3) {
            return Err(MaError::Config("coarse_n must be at least 3".into()));
        }
        Ok(())
    }

    pub fn eps_reg_for(&self, grid: &GridSpec) -> f64 {
        self.eps_reg
            .unwrap_or_else(|| 1e-8 / (2.0 * grid.h() * grid.h()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIters,
    DampingExhausted,
    LinearFailure,
    Diverged,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Termination::Converged => "converged",
            Termination::MaxIters => "max_iters",
            Termination::DampingExhausted => "damping_exhausted",
            Termination::LinearFailure => "linear_failure",
            Termination::Diverged => "diverged",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub solver: String,
    pub scheme: Scheme,
    pub iterations: usize,
    /// Residual max-norm of the initial iterate and after every iteration.
    pub residual_history: Vec<f64>,
    /// Euclidean residual norms alongside `residual_history` (Newton only).
    #[serde(default)]
    pub residual_l2_history: Vec<f64>,
    /// Step fraction used by each Newton iteration.
    pub damping_history: Vec<f64>,
    pub seconds: f64,
    pub termination: Termination,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().unwrap_or(&f64::NAN)
    }
}

fn stencil_mode(dim: usize) -> DirectionMode {
    if dim == 3 {
        DirectionMode::FaceDiagonals
    } else {
        DirectionMode::Full
    }
}

/// A problem discretized on a grid with a chosen scheme.
pub struct Discretization {
    pub grid: GridSpec,
    pub scheme: Scheme,
    pub map: InteriorMap,
    pub f: GridFunction,
    pub boundary: GridFunction,
    pub monotone: Option<MonotoneOperator>,
    pub weights: Option<WeightField>,
    pub eps_reg: f64,
}

impl Discretization {
    pub fn new(problem: &Problem, grid: &GridSpec, config: &SolverConfig) -> Result<Self> {
        config.validate()?;
        let f = problem.rhs_on(grid)?;
        let boundary = problem.boundary_on(grid)?;
        let monotone = match config.scheme {
            Scheme::Standard => None,
            Scheme::Monotone | Scheme::Hybrid => {
                let bases = StencilBasisSet::standard(grid.dim(), config.stencil_width)?;
                Some(MonotoneOperator::new(
                    grid,
                    bases,
                    &BoundaryTrace::Exact(problem.g.clone()),
                )?)
            }
        };
        let weights = match config.scheme {
            Scheme::Hybrid => Some(weight_field(
                problem,
                grid,
                config.weight_eps.unwrap_or(grid.h()),
                config.weight_ramp,
            )?),
            _ => None,
        };
        Ok(Self {
            grid: *grid,
            scheme: config.scheme,
            map: InteriorMap::new(grid),
            f,
            boundary,
            monotone,
            weights,
            eps_reg: config.eps_reg_for(grid),
        })
    }

    pub fn residual(&self, u: &GridFunction) -> Residual {
        match self.scheme {
            Scheme::Standard => residual_standard(u, &self.f, &self.map),
            Scheme::Monotone => residual_monotone(u, &self.f, self.mono()),
            Scheme::Hybrid => {
                let op = self.mono();
                let weights = self.weights.as_ref().expect("hybrid weights");
                let standard = residual_standard(u, &self.f, &self.map);
                blend(&standard, residual_monotone(u, &self.f, op), op, weights, &self.f)
            }
        }
    }

    pub fn jacobian(&self, u: &GridFunction, residual: &Residual) -> SparseMatrix {
        match self.scheme {
            Scheme::Standard => jacobian_standard(u, &self.map),
            Scheme::Monotone => jacobian_monotone(residual, self.mono(), self.eps_reg),
            Scheme::Hybrid => {
                let jn = jacobian_standard(u, &self.map);
                let jm = jacobian_monotone(residual, self.mono(), self.eps_reg);
                jacobian_hybrid(&jn, &jm, self.weights.as_ref().expect("hybrid weights"), &self.map)
            }
        }
    }

    /// Discrete convexity check used by the Newton line search. Where the
    /// standard scheme carries weight, every centred axis second difference
    /// must be positive (the standard scheme also has nonconvex solutions).
    /// Where the monotone scheme carries weight, every stencil directional
    /// difference must be at least `-tol` (with `f = 0` the monotone scheme
    /// is satisfied by functions that are concave along some direction).
    pub fn is_discretely_convex(&self, u: &GridFunction, tol: f64) -> bool {
        let dim = self.grid.dim();
        let mut diffs = Vec::new();
        self.map.points().iter().enumerate().all(|(k, &p)| {
            let w = match self.scheme {
                Scheme::Standard => 1.0,
                Scheme::Monotone => 0.0,
                Scheme::Hybrid => self.weights.as_ref().expect("hybrid weights").w.values()[p],
            };
            if w > 0.0 {
                let hess = discrete_hessian(u, p);
                if !(0..dim).all(|a| hess[a][a] > 0.0) {
                    return false;
                }
            }
            if w < 1.0 {
                self.mono().directional_diffs(u.values(), k, &mut diffs);
                if !diffs.iter().all(|&d| d >= -tol) {
                    return false;
                }
            }
            true
        })
    }

    /// Largest function below `u` with every monotone stencil difference
    /// nonnegative (up to about `tol`); `u` itself for the standard scheme.
    pub fn project_convex(&self, u: &mut GridFunction, tol: f64) {
        if let Some(op) = &self.monotone {
            let h = self.grid.h();
            let active: Vec<bool> = match &self.weights {
                Some(w) => self.map.points().iter().map(|&p| w.w.values()[p] < 1.0).collect(),
                None => vec![true; self.map.len()],
            };
            convexify_in_place(u.values_mut(), &op.table, &op.map, Some(&active), 0.0, 0.5 * tol * h * h);
        }
    }

    fn mono(&self) -> &MonotoneOperator {
        self.monotone.as_ref().expect("monotone operator")
    }
}

/// Largest grid function below `u` whose second differences along every
/// direction are nonnegative, with boundary values held fixed.
///
/// Gauss-Seidel sweeps of `u(x) ← min(u(x), chord values along each
/// direction)` until the largest update drops below `1e-10` or `10⁴`
/// sweeps have run.
pub fn convexify(u: &GridFunction, directions: &[Direction], trace: &BoundaryTrace, modulus: f64) -> GridFunction {
    let grid = *u.grid();
    let map = InteriorMap::new(&grid);
    let table = StencilTable::new(&grid, &map, directions, trace);
    let mut out = u.clone();
    convexify_in_place(out.values_mut(), &table, &map, None, modulus, 1e-10);
    out
}

fn convexify_in_place(
    values: &mut [f64],
    table: &StencilTable,
    map: &InteriorMap,
    active: Option<&[bool]>,
    modulus: f64,
    tol: f64,
) {
    let nd = table.directions().len();
    for _ in 0..10_000 {
        let mut max_update = 0.0f64;
        for (k, &p) in map.points().iter().enumerate() {
            if active.is_some_and(|a| !a[k]) {
                continue;
            }
            let mut best = values[p];
            for d in 0..nd {
                let pair = table.pair(k, d);
                best = best.min(pair.chord_value(values) - modulus / pair.weights.2);
            }
            max_update = max_update.max(values[p] - best);
            values[p] = best;
        }
        if max_update < tol {
            break;
        }
    }
}

fn factorial(d: usize) -> f64 {
    (1..=d).product::<usize>() as f64
}

/// Initial iterate: solve `Δu = sqrt(d!·f)` with Dirichlet data on a coarse
/// grid, convexify, interpolate to `grid`, restore the exact boundary values
/// and convexify again on `grid`.
pub fn initialize(problem: &Problem, grid: &GridSpec, config: &SolverConfig) -> Result<GridFunction> {
    let dim = grid.dim();
    let coarse = GridSpec::new(dim, config.coarse_n.map_or(grid.n(), |c| c.min(grid.n())))?;
    let f = problem.rhs_on(&coarse)?;
    let scale = factorial(dim);
    let mut rhs = f.clone();
    rhs.values_mut().iter_mut().for_each(|v| *v = (scale * v.max(0.0)).sqrt());
    let boundary = problem.boundary_on(&coarse)?;
    let u0 = PoissonSolver::new(&coarse)?.solve(&rhs, &boundary)?;
    let dirs = build_directions(dim, config.stencil_width, stencil_mode(dim));
    let trace = BoundaryTrace::Exact(problem.g.clone());
    let u0 = convexify(&u0, &dirs, &trace, config.init_modulus);
    if coarse == *grid {
        return Ok(u0);
    }
    let mut u = resample(&u0, grid);
    let target = problem.boundary_on(grid)?;
    for p in 0..grid.len() {
        if grid.is_boundary(p) {
            u.values_mut()[p] = target.values()[p];
        }
    }
    // multilinear interpolation is not convex along diagonals
    Ok(convexify(&u, &dirs, &trace, config.init_modulus))
}

fn apply_step(u: &GridFunction, map: &InteriorMap, delta: &[f64], alpha: f64) -> GridFunction {
    let mut out = u.clone();
    let v = out.values_mut();
    for (k, &p) in map.points().iter().enumerate() {
        v[p] -= alpha * delta[k];
    }
    out
}

/// Damped Newton from the standard initialization.
pub fn newton_solve(problem: &Problem, grid: &GridSpec, config: &SolverConfig) -> Result<(GridFunction, SolveReport)> {
    let start = Instant::now();
    let u0 = initialize(problem, grid, config)?;
    let (u, mut report) = newton_from(problem, grid, config, u0, |_, _| {})?;
    report.seconds = start.elapsed().as_secs_f64();
    Ok((u, report))
}

/// Damped Newton from a caller-supplied iterate. `observe(n, u)` is called
/// after every accepted step.
///
/// Each step solves `J δ = F[u] − f` and sets `u ← u − αδ`, halving `α`
/// from 1 until the step is accepted (unless the line search is disabled,
/// in which case `α = 1`). With the line search on, each trial iterate is
/// first lowered by [`Discretization::project_convex`] where the monotone
/// scheme carries weight; for `f = 0` the monotone scheme is also solved by
/// functions that are concave along some direction, and Newton otherwise
/// tends to find those. A trial is accepted when it passes
/// [`Discretization::is_discretely_convex`] and its residual max-norm is
/// below the largest of the last `nonmonotone_memory` norms, or equals at
/// most the current norm while the Euclidean norm strictly decreases.
pub fn newton_from<O>(
    problem: &Problem,
    grid: &GridSpec,
    config: &SolverConfig,
    initial: GridFunction,
    mut observe: O,
) -> Result<(GridFunction, SolveReport)>
where
    O: FnMut(usize, &GridFunction),
{
    let start = Instant::now();
    let disc = Discretization::new(problem, grid, config)?;
    let mut u = initial;
    for p in 0..grid.len() {
        if grid.is_boundary(p) {
            u.values_mut()[p] = disc.boundary.values()[p];
        }
    }
    let mut residual = disc.residual(&u);
    let mut norm = residual.max_norm();
    let mut l2 = residual.l2_norm();
    let mut history = vec![norm];
    let mut l2_history = vec![l2];
    let mut damping = Vec::new();
    let mut termination = Termination::MaxIters;
    let mut iterations = 0;
    while iterations < config.max_newton_iters {
        if norm <= config.newton_tol {
            termination = Termination::Converged;
            break;
        }
        let jac = disc.jacobian(&u, &residual);
        let solved = factorize(&jac).map(|f| f.solve_checked(&jac, &residual.values, config.linear_tol));
        let delta = match solved {
            Ok((x, rep)) if rep.success => x,
            Ok((_, rep)) => {
                debug!("linear solve failed: residual {:e}", rep.relative_residual);
                termination = Termination::LinearFailure;
                break;
            }
            Err(e) => {
                debug!("factorization failed: {e}");
                termination = Termination::LinearFailure;
                break;
            }
        };
        let mut alpha = 1.0;
        let accepted = loop {
            let mut trial = apply_step(&u, &disc.map, &delta, alpha);
            if config.line_search {
                disc.project_convex(&mut trial, config.newton_tol);
            }
            let r = disc.residual(&trial);
            let n = r.max_norm();
            let n2 = r.l2_norm();
            let reference = history.iter().rev().take(config.nonmonotone_memory).fold(0.0f64, |a, &b| a.max(b));
            let decrease = n < reference || (n <= norm && n2 < l2);
            debug!("  alpha {alpha}: residual {n:e} l2 {n2:e}");
            if !config.line_search || (decrease && disc.is_discretely_convex(&trial, 10.0 * config.newton_tol)) {
                break Some((trial, r, n, n2));
            }
            alpha *= 0.5;
            if alpha < config.min_damping {
                break None;
            }
        };
        let Some((trial, r, n, n2)) = accepted else {
            termination = Termination::DampingExhausted;
            break;
        };
        u = trial;
        residual = r;
        norm = n;
        l2 = n2;
        iterations += 1;
        history.push(norm);
        l2_history.push(l2);
        damping.push(alpha);
        debug!("newton {iterations}: residual {norm:e}, alpha {alpha}");
        observe(iterations, &u);
        if !norm.is_finite() {
            termination = Termination::Diverged;
            break;
        }
    }
    if termination == Termination::MaxIters && norm <= config.newton_tol {
        termination = Termination::Converged;
    }
    Ok((
        u,
        SolveReport {
            solver: "newton".into(),
            scheme: config.scheme,
            iterations,
            residual_history: history,
            residual_l2_history: l2_history,
            damping_history: damping,
            seconds: start.elapsed().as_secs_f64(),
            termination,
        },
    ))
}

/// Forward Euler on `u_t = F[u] − f` with `dt = c·h²`, from the standard
/// initialization.
pub fn explicit_solve(problem: &Problem, grid: &GridSpec, config: &SolverConfig) -> Result<(GridFunction, SolveReport)> {
    let start = Instant::now();
    let u0 = initialize(problem, grid, config)?;
    let (u, mut report) = explicit_from(problem, grid, config, u0)?;
    report.seconds = start.elapsed().as_secs_f64();
    Ok((u, report))
}

pub fn explicit_from(
    problem: &Problem,
    grid: &GridSpec,
    config: &SolverConfig,
    initial: GridFunction,
) -> Result<(GridFunction, SolveReport)> {
    if config.scheme == Scheme::Standard {
        return Err(MaError::Config(
            "forward Euler needs the monotone or hybrid scheme".into(),
        ));
    }
    let start = Instant::now();
    let disc = Discretization::new(problem, grid, config)?;
    let dt = config.explicit_dt_factor * grid.h() * grid.h();
    let mut u = initial;
    let mut residual = disc.residual(&u);
    let mut norm = residual.max_norm();
    let mut min_norm = norm;
    let mut history = vec![norm];
    let mut iterations = 0;
    let mut termination = Termination::MaxIters;
    loop {
        if norm <= config.explicit_tol {
            termination = Termination::Converged;
            break;
        }
        if !norm.is_finite() || norm > 10.0 * min_norm {
            termination = Termination::Diverged;
            break;
        }
        if iterations >= config.explicit_max_iters {
            break;
        }
        let v = u.values_mut();
        for (k, &p) in disc.map.points().iter().enumerate() {
            v[p] += dt * residual.values[k];
        }
        residual = disc.residual(&u);
        norm = residual.max_norm();
        min_norm = min_norm.min(norm);
        iterations += 1;
        history.push(norm);
    }
    Ok((
        u,
        SolveReport {
            solver: "explicit".into(),
            scheme: config.scheme,
            iterations,
            residual_history: history,
            residual_l2_history: Vec::new(),
            damping_history: Vec::new(),
            seconds: start.elapsed().as_secs_f64(),
            termination,
        },
    ))
}

/// 2D semi-implicit iteration `Δu⁺ = sqrt(2f + u_xx² + u_yy² + 2u_xy²)`,
/// started from `Δu⁰ = sqrt(2f)`.
///
/// Stops when successive iterates differ by at most `semi_implicit_tol`;
/// running out of iterations is reported, not raised. The recorded history
/// is the standard-scheme residual of each iterate.
pub fn semi_implicit_solve_2d(
    problem: &Problem,
    grid: &GridSpec,
    config: &SolverConfig,
) -> Result<(GridFunction, SolveReport)> {
    if grid.dim() != 2 {
        return Err(MaError::Config("the semi-implicit iteration is two-dimensional".into()));
    }
    config.validate()?;
    let start = Instant::now();
    let f = problem.rhs_on(grid)?;
    let boundary = problem.boundary_on(grid)?;
    let map = InteriorMap::new(grid);
    let poisson = PoissonSolver::new(grid)?;
    let mut rhs = f.clone();
    rhs.values_mut().iter_mut().for_each(|v| *v = (2.0 * v.max(0.0)).sqrt());
    let mut u = poisson.solve(&rhs, &boundary)?;
    let mut history = vec![residual_standard(&u, &f, &map).max_norm()];
    let mut iterations = 0;
    let mut termination = Termination::MaxIters;
    while iterations < config.semi_implicit_max_iters {
        for &p in map.points() {
            let hess = crate::discretization::discrete_hessian(&u, p);
            let frob = hess[0][0] * hess[0][0] + hess[1][1] * hess[1][1] + 2.0 * hess[0][1] * hess[0][1];
            rhs.values_mut()[p] = (2.0 * f.values()[p].max(0.0) + frob).sqrt();
        }
        let next = poisson.solve(&rhs, &boundary)?;
        let change = next
            .values()
            .iter()
            .zip(u.values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        u = next;
        iterations += 1;
        history.push(residual_standard(&u, &f, &map).max_norm());
        if !change.is_finite() {
            termination = Termination::Diverged;
            break;
        }
        if change <= config.semi_implicit_tol {
            termination = Termination::Converged;
            break;
        }
    }
    Ok((
        u,
        SolveReport {
            solver: "semi-implicit".into(),
            scheme: Scheme::Standard,
            iterations,
            residual_history: history,
            residual_l2_history: Vec::new(),
            damping_history: Vec::new(),
            seconds: start.elapsed().as_secs_f64(),
            termination,
        },
    ))
}
