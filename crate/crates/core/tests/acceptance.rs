use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use monge_ampere::discretization::{discrete_hessian, residual_monotone, MonotoneOperator};
use monge_ampere::grid::{sample, GridFunction, GridSpec, InteriorMap};
use monge_ampere::problems::Problem;
use monge_ampere::reporting::max_error;
use monge_ampere::solvers::{
    explicit_solve, newton_from, newton_solve, semi_implicit_solve_2d, Discretization,
};
use monge_ampere::{BoundaryTrace, Scheme, SolverConfig, StencilBasisSet, Termination};

const ERROR_FACTOR: f64 = 2.0;
const ITER_REL: f64 = 0.5;
const ITER_MAX_RATIO: f64 = 2.0;
const RUN_LIMIT_3D: f64 = 60.0;
const FAILURE_WINDOW: usize = 5;
const FAILURE_GROWTH: f64 = 10.0;
const JAC_STEP: f64 = 1e-6;
const JAC_RTOL: f64 = 1e-5;
const ELLIPTIC_TRIALS: usize = 1000;
const ORACLE_TRIALS: usize = 100;
const ORACLE_RTOL: f64 = 1e-12;
const SCALING_EXPONENT: f64 = 1.8;
const EXPLICIT_RATIO: usize = 10;

struct Outcome {
    pass: bool,
    lines: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            pass: true,
            lines: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, line: String) {
        self.pass &= ok;
        self.lines.push(format!("    [{}] {line}", if ok { "ok" } else { "x " }));
    }
}

fn within_factor(value: f64, target: f64, factor: f64) -> bool {
    value <= target * factor && value >= target / factor
}

fn min_axis_second_difference(u: &GridFunction) -> f64 {
    let g = u.grid();
    let map = InteriorMap::new(g);
    let mut min = f64::INFINITY;
    for &p in map.points() {
        let hess = discrete_hessian(u, p);
        for a in 0..g.dim() {
            min = min.min(hess[a][a]);
        }
    }
    min
}

struct Run {
    error: f64,
    iterations: usize,
    termination: Termination,
    seconds: f64,
}

fn hybrid_run(name: &str, n: usize) -> Run {
    let problem = Problem::by_name(name).unwrap();
    let grid = GridSpec::new(problem.dim, n).unwrap();
    let start = Instant::now();
    let (u, report) = newton_solve(&problem, &grid, &SolverConfig::default()).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    Run {
        error: max_error(&u, problem.exact.as_ref().unwrap().as_ref()),
        iterations: report.iterations,
        termination: report.termination,
        seconds,
    }
}

const TABLE_2D: [(&str, [(usize, f64, usize); 2]); 4] = [
    ("c2_2d", [(31, 24.45e-5, 3), (63, 9.06e-5, 4)]),
    ("c1_2d", [(31, 12.2e-4, 4), (63, 4.2e-4, 7)]),
    ("blowup_2d", [(31, 1.74e-3, 4), (63, 0.59e-3, 4)]),
    ("cone_2d", [(31, 3e-3, 9), (63, 3e-3, 15)]),
];

fn criteria_1_2() -> (Outcome, Outcome) {
    let mut errors = Outcome::new();
    let mut iters = Outcome::new();
    for (name, rows) in TABLE_2D {
        for (n, target_err, target_iters) in rows {
            let run = hybrid_run(name, n);
            errors.check(
                run.termination == Termination::Converged && within_factor(run.error, target_err, ERROR_FACTOR),
                format!(
                    "{name} N={n}: error {:.3e} vs {:.3e} (ratio {:.2}), {}",
                    run.error,
                    target_err,
                    run.error / target_err,
                    run.termination
                ),
            );
            let t = target_iters as f64;
            let k = run.iterations as f64;
            let ok = run.termination == Termination::Converged
                && (k - t).abs() <= ITER_REL * t
                && k <= ITER_MAX_RATIO * t;
            iters.check(ok, format!("{name} N={n}: {} iterations vs {target_iters}", run.iterations));
        }
    }
    (errors, iters)
}

fn criterion_3() -> Outcome {
    let table: [(&str, [f64; 3]); 3] = [
        ("c2_3d", [0.0151, 0.0140, 0.0129]),
        ("c1_3d", [0.0034, 0.0022, 0.0016]),
        ("blowup_3d", [9.6e-3, 5.2e-3, 4.6e-3]),
    ];
    let mut out = Outcome::new();
    for (name, targets) in table {
        for (n, target) in [7, 11, 15].into_iter().zip(targets) {
            let run = hybrid_run(name, n);
            out.check(
                run.termination == Termination::Converged
                    && within_factor(run.error, target, ERROR_FACTOR)
                    && run.seconds < RUN_LIMIT_3D,
                format!(
                    "{name} N={n}: error {:.3e} vs {:.3e} (ratio {:.2}), {:.2}s, {}",
                    run.error,
                    target,
                    run.error / target,
                    run.seconds,
                    run.termination
                ),
            );
        }
    }
    out
}

fn criterion_4() -> Outcome {
    let problem = Problem::by_name("blowup_2d").unwrap();
    let grid = GridSpec::new(2, 31).unwrap();
    let exact = problem.exact_on(&grid).unwrap().unwrap();
    let mut out = Outcome::new();

    let config = SolverConfig {
        scheme: Scheme::Standard,
        line_search: false,
        max_newton_iters: FAILURE_WINDOW,
        ..SolverConfig::default()
    };
    let mut first_nonconvex = None;
    let (_, report) = newton_from(&problem, &grid, &config, exact.clone(), |k, u| {
        if first_nonconvex.is_none() && min_axis_second_difference(u) < 0.0 {
            first_nonconvex = Some(k);
        }
    })
    .unwrap();
    let r0 = report.residual_history[0];
    let growth = report.residual_history.iter().position(|&r| !(r < FAILURE_GROWTH * r0));
    out.check(
        first_nonconvex.is_some() || growth.is_some(),
        format!(
            "standard, undamped: nonconvex at iteration {:?}, 10x residual growth at iteration {:?}, residuals {:?}, {}",
            first_nonconvex,
            growth,
            report.residual_history.iter().map(|r| format!("{r:.2e}")).collect::<Vec<_>>(),
            report.termination
        ),
    );

    let (_, hybrid) = newton_from(&problem, &grid, &SolverConfig::default(), exact, |_, _| {}).unwrap();
    out.check(
        hybrid.converged(),
        format!("hybrid from the same start: {} after {} iterations", hybrid.termination, hybrid.iterations),
    );
    out
}

fn perturbed_iterate(problem: &Problem, grid: &GridSpec, rng: &mut ChaCha8Rng) -> GridFunction {
    let mut u = problem.exact_on(grid).unwrap().unwrap();
    let amp = 0.02 * grid.h() * grid.h();
    for p in 0..grid.len() {
        if !grid.is_boundary(p) {
            u.values_mut()[p] += amp * rng.gen_range(-1.0..1.0);
        }
    }
    u
}

fn jacobian_check(name: &str, n: usize, scheme: Scheme, rng: &mut ChaCha8Rng) -> (f64, usize, usize) {
    let problem = Problem::by_name(name).unwrap();
    let grid = GridSpec::new(problem.dim, n).unwrap();
    let config = SolverConfig {
        scheme,
        ..SolverConfig::default()
    };
    let disc = Discretization::new(&problem, &grid, &config).unwrap();
    let u = perturbed_iterate(&problem, &grid, rng);
    let r = disc.residual(&u);
    let jac = disc.jacobian(&u, &r);
    let m = disc.map.len();
    let v: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let jv = jac.matvec(&v);
    let shifted = |s: f64| {
        let mut w = u.clone();
        for (k, &p) in disc.map.points().iter().enumerate() {
            w.values_mut()[p] += s * v[k];
        }
        disc.residual(&w)
    };
    let plus = shifted(JAC_STEP);
    let minus = shifted(-JAC_STEP);
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    let mut excluded = 0;
    for k in 0..m {
        let unstable = scheme != Scheme::Standard
            && (plus.active_basis[k] != r.active_basis[k]
                || minus.active_basis[k] != r.active_basis[k]
                || plus.active_clamp[k] != r.active_clamp[k]
                || minus.active_clamp[k] != r.active_clamp[k]
                || r.active_clamp[k] != 0
                || r.active_diffs[k][..grid.dim()].iter().any(|&d| d <= disc.eps_reg));
        if unstable {
            excluded += 1;
            continue;
        }
        let fd = (plus.values[k] - minus.values[k]) / (2.0 * JAC_STEP);
        worst = worst.max((fd - jv[k]).abs());
        scale = scale.max(jv[k].abs());
    }
    (worst / scale, excluded, m)
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut out = Outcome::new();
    for (name, n) in [("c2_2d", 21), ("blowup_2d", 21), ("c2_3d", 9), ("blowup_3d", 9)] {
        for scheme in [Scheme::Standard, Scheme::Monotone, Scheme::Hybrid] {
            for _ in 0..3 {
                let (rel, excluded, m) = jacobian_check(name, n, scheme, &mut rng);
                out.check(
                    rel <= JAC_RTOL,
                    format!("{name} N={n} {scheme}: relative error {rel:.2e} ({excluded}/{m} rows excluded)"),
                );
            }
        }
    }
    out
}

fn monotone_operator(grid: &GridSpec) -> MonotoneOperator {
    let bases = StencilBasisSet::standard(grid.dim(), 2).unwrap();
    MonotoneOperator::new(grid, bases, &BoundaryTrace::Lattice).unwrap()
}

fn criterion_6() -> Outcome {
    let grid = GridSpec::new(2, 21).unwrap();
    let op = monotone_operator(&grid);
    let f = GridFunction::zeros(grid);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut neighbour_failures = 0;
    let mut centre_failures = 0;
    let mut neighbour_trials = 0;
    for _ in 0..ELLIPTIC_TRIALS {
        let u = sample(&grid, |x| {
            0.5 * (x[0] * x[0] + x[1] * x[1])
        })
        .unwrap();
        let mut u = u;
        u.values_mut().iter_mut().for_each(|v| *v += 1e-3 * rng.gen_range(-1.0..1.0));
        let k = rng.gen_range(0..op.map.len());
        let p = op.map.points()[k];
        let before = residual_monotone(&u, &f, &op).scheme_values[k];

        let d = rng.gen_range(0..op.bases.directions.len());
        let mut neighbours = Vec::new();
        op.table.pair(k, d).for_each_neighbor(|q, _| neighbours.push(q));
        if let Some(&q) = neighbours.get(rng.gen_range(0..neighbours.len().max(1))) {
            neighbour_trials += 1;
            let mut w = u.clone();
            w.values_mut()[q] += rng.gen_range(0.0..1e-2);
            if residual_monotone(&w, &f, &op).scheme_values[k] < before {
                neighbour_failures += 1;
            }
        }

        let mut w = u.clone();
        w.values_mut()[p] += rng.gen_range(0.0..1e-2);
        if residual_monotone(&w, &f, &op).scheme_values[k] > before {
            centre_failures += 1;
        }
    }
    let mut out = Outcome::new();
    out.check(
        neighbour_failures == 0,
        format!("neighbour increases: {neighbour_failures} decreases in {neighbour_trials} trials"),
    );
    out.check(
        centre_failures == 0,
        format!("centre increases: {centre_failures} increases in {ELLIPTIC_TRIALS} trials"),
    );
    out
}

fn random_spd(dim: usize, rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let mut b = [[0.0; 3]; 3];
    for row in b.iter_mut().take(dim) {
        for v in row.iter_mut().take(dim) {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    let mut a = [[0.0; 3]; 3];
    for i in 0..dim {
        for j in 0..dim {
            a[i][j] = (0..dim).map(|l| b[i][l] * b[j][l]).sum::<f64>();
        }
        a[i][i] += 0.1;
    }
    a
}

fn det(a: &[[f64; 3]; 3], dim: usize) -> f64 {
    if dim == 2 {
        a[0][0] * a[1][1] - a[0][1] * a[1][0]
    } else {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    }
}

fn centre_value(grid: &GridSpec, op: &MonotoneOperator, a: &[[f64; 3]; 3]) -> f64 {
    let dim = grid.dim();
    let u = sample(grid, |x| {
        let mut s = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                s += 0.5 * a[i][j] * x[i] * x[j];
            }
        }
        s
    })
    .unwrap();
    let c = (grid.n() - 1) / 2;
    let idx = if dim == 2 { [c, c, 0] } else { [c, c, c] };
    let k = op.map.unknown(grid.flat(idx)).unwrap();
    let f = GridFunction::zeros(*grid);
    residual_monotone(&u, &f, op).scheme_values[k]
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut out = Outcome::new();
    for (dim, n) in [(2, 21), (3, 9)] {
        let grid = GridSpec::new(dim, n).unwrap();
        let op = monotone_operator(&grid);
        let mut below = 0;
        let mut worst_gap = 0.0f64;
        for _ in 0..ORACLE_TRIALS {
            let a = random_spd(dim, &mut rng);
            let d = det(&a, dim);
            let value = centre_value(&grid, &op, &a);
            if value < d * (1.0 - ORACLE_RTOL) {
                below += 1;
            }
            let mut diag = [[0.0; 3]; 3];
            for i in 0..dim {
                diag[i][i] = a[i][i];
            }
            let dd = det(&diag, dim);
            worst_gap = worst_gap.max((centre_value(&grid, &op, &diag) - dd).abs() / dd);
        }
        out.check(below == 0, format!("{dim}D: {below} of {ORACLE_TRIALS} values below det(A)"));
        out.check(
            worst_gap <= ORACLE_RTOL,
            format!("{dim}D diagonal: worst relative gap {worst_gap:.2e}"),
        );
    }
    out
}

fn criterion_8() -> Outcome {
    let problem = Problem::by_name("c2_2d").unwrap();
    let mut points = Vec::new();
    let mut out = Outcome::new();
    for n in [31usize, 63, 127] {
        let grid = GridSpec::new(2, n).unwrap();
        let mut best = f64::INFINITY;
        for _ in 0..3 {
            let start = Instant::now();
            let (_, report) = newton_solve(&problem, &grid, &SolverConfig::default()).unwrap();
            best = best.min(start.elapsed().as_secs_f64());
            assert!(report.converged());
        }
        points.push((((n * n) as f64).ln(), best.ln()));
        out.lines.push(format!("    N={n}: {best:.3}s"));
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / 3.0;
    let my = points.iter().map(|p| p.1).sum::<f64>() / 3.0;
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    out.check(slope <= SCALING_EXPONENT, format!("fitted exponent {slope:.2} (limit {SCALING_EXPONENT})"));
    out
}

fn criterion_9() -> Outcome {
    let mut out = Outcome::new();
    let config = SolverConfig::default();

    let cone = Problem::by_name("cone_2d").unwrap();
    let grid = GridSpec::new(2, 63).unwrap();
    let (_, semi) = semi_implicit_solve_2d(&cone, &grid, &config).unwrap();
    out.check(
        !semi.converged(),
        format!("cone N=63 semi-implicit: {} after {} iterations", semi.termination, semi.iterations),
    );
    let (_, newton) = newton_solve(&cone, &grid, &config).unwrap();
    out.check(
        newton.converged(),
        format!("cone N=63 Newton: {} after {} iterations", newton.termination, newton.iterations),
    );

    let c2 = Problem::by_name("c2_2d").unwrap();
    let grid = GridSpec::new(2, 31).unwrap();
    let (_, newton) = newton_solve(&c2, &grid, &config).unwrap();
    let (_, explicit) = explicit_solve(&c2, &grid, &config).unwrap();
    out.check(
        newton.converged() && explicit.converged() && explicit.iterations >= EXPLICIT_RATIO * newton.iterations,
        format!(
            "c2 N=31: explicit {} iterations ({}), Newton {} ({})",
            explicit.iterations, explicit.termination, newton.iterations, newton.termination
        ),
    );
    out
}

fn main() {
    let (c1, c2) = criteria_1_2();
    let results = [
        ("1", "error table, 2D hybrid", c1),
        ("2", "Newton iteration counts", c2),
        ("3", "3D errors and run time", criterion_3()),
        ("4", "standard-scheme Newton failure", criterion_4()),
        ("5", "Jacobian vs finite differences", criterion_5()),
        ("6", "degenerate ellipticity", criterion_6()),
        ("7", "quadratic oracle", criterion_7()),
        ("8", "Newton time scaling", criterion_8()),
        ("9", "solver comparison", criterion_9()),
    ];
    let mut failed = 0;
    for (id, title, outcome) in &results {
        println!("{} criterion {id}: {title}", if outcome.pass { "PASS" } else { "FAIL" });
        for line in &outcome.lines {
            println!("{line}");
        }
        if !outcome.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
