//! Error metrics, gradient-map export and the convergence-study runner.

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::discretization::Scheme;
use crate::error::{MaError, Result};
use crate::grid::{GridFunction, GridSpec};
use crate::problems::Problem;
use crate::solvers::{explicit_solve, newton_solve, semi_implicit_solve_2d, SolveReport, SolverConfig, Termination};

/// Largest pointwise deviation from `exact` over all lattice points.
pub fn max_error(u: &GridFunction, exact: &dyn Fn(&[f64]) -> f64) -> f64 {
    let grid = u.grid();
    let dim = grid.dim();
    u.values()
        .iter()
        .enumerate()
        .map(|(p, v)| {
            let x = grid.coord(p);
            (v - exact(&x[..dim])).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientSample {
    pub x: f64,
    pub y: f64,
    pub gx: f64,
    pub gy: f64,
}

/// Numerical gradient of a 2D grid function at every lattice point, as the
/// map `(x, y) ↦ (u_x, u_y)`. Centred differences inside, second-order
/// one-sided differences on the boundary. With `circle_only`, points outside
/// the circle inscribed in the box are dropped.
pub fn gradient_map(u: &GridFunction, circle_only: bool) -> Result<Vec<GradientSample>> {
    let grid = *u.grid();
    if grid.dim() != 2 {
        return Err(MaError::Config("gradient maps are only exported in 2D".into()));
    }
    let n = grid.n();
    let h = grid.h();
    let v = u.values();
    let at = |i: usize, j: usize| v[i + n * j];
    let diff = |k: usize, f: &dyn Fn(usize) -> f64| -> f64 {
        if k == 0 {
            (-3.0 * f(0) + 4.0 * f(1) - f(2)) / (2.0 * h)
        } else if k == n - 1 {
            (3.0 * f(n - 1) - 4.0 * f(n - 2) + f(n - 3)) / (2.0 * h)
        } else {
            (f(k + 1) - f(k - 1)) / (2.0 * h)
        }
    };
    let mut out = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let x = i as f64 * h;
            let y = j as f64 * h;
            if circle_only && (x - 0.5).powi(2) + (y - 0.5).powi(2) > 0.25 * (1.0 + 1e-12) {
                continue;
            }
            let gx = diff(i, &|a| at(a, j));
            let gy = diff(j, &|b| at(i, b));
            out.push(GradientSample { x, y, gx, gy });
        }
    }
    Ok(out)
}

pub fn write_gradient_csv<W: Write>(samples: &[GradientSample], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if samples.is_empty() {
        w.write_record(["x", "y", "gx", "gy"])?;
    }
    for s in samples {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Newton,
    Explicit,
    SemiImplicit,
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverKind::Newton => "newton",
            SolverKind::Explicit => "explicit",
            SolverKind::SemiImplicit => "semi-implicit",
        })
    }
}

impl FromStr for SolverKind {
    type Err = MaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "newton" => Ok(SolverKind::Newton),
            "explicit" => Ok(SolverKind::Explicit),
            "semi-implicit" => Ok(SolverKind::SemiImplicit),
            other => Err(MaError::Config(format!("unknown solver '{other}'"))),
        }
    }
}

/// Run one solver on one problem.
pub fn solve(
    problem: &Problem,
    grid: &GridSpec,
    config: &SolverConfig,
    solver: SolverKind,
) -> Result<(GridFunction, SolveReport)> {
    match solver {
        SolverKind::Newton => newton_solve(problem, grid, config),
        SolverKind::Explicit => explicit_solve(problem, grid, config),
        SolverKind::SemiImplicit => semi_implicit_solve_2d(problem, grid, config),
    }
}

/// One line of a convergence study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub problem: String,
    pub n: usize,
    pub scheme: Scheme,
    pub solver: SolverKind,
    pub iterations: usize,
    pub seconds: f64,
    /// Empty when the problem has no closed-form solution or the run failed.
    pub max_error: Option<f64>,
    pub termination: Termination,
}

/// Solve `problem` on an `n`-point grid and measure the result.
/// Errors raised by the solver are recorded as a `linear_failure` row.
pub fn study_row(problem: &Problem, n: usize, config: &SolverConfig, solver: SolverKind) -> Result<StudyRow> {
    let grid = GridSpec::new(problem.dim, n)?;
    let mut row = StudyRow {
        problem: problem.name.clone(),
        n,
        scheme: config.scheme,
        solver,
        iterations: 0,
        seconds: 0.0,
        max_error: None,
        termination: Termination::LinearFailure,
    };
    match solve(problem, &grid, config, solver) {
        Ok((u, report)) => {
            row.iterations = report.iterations;
            row.seconds = report.seconds;
            row.termination = report.termination;
            row.max_error = problem.exact.as_ref().map(|e| max_error(&u, e.as_ref()));
        }
        Err(MaError::Config(msg)) => return Err(MaError::Config(msg)),
        Err(e) => log::warn!("{} n={n}: {e}", problem.name),
    }
    Ok(row)
}

pub fn write_study_csv<W: Write>(rows: &[StudyRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["problem", "n", "scheme", "solver", "iterations", "seconds", "max_error", "termination"])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_study_csv<R: Read>(input: R) -> Result<Vec<StudyRow>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// Run every `(problem, n)` pair in order and write the table to `output`.
/// Failed runs become rows with their termination reason.
pub fn run_study(
    problems: &[String],
    ladder: &[usize],
    config: &SolverConfig,
    solver: SolverKind,
    output: Option<&Path>,
) -> Result<Vec<StudyRow>> {
    config.validate()?;
    let resolved = problems
        .iter()
        .map(|name| Problem::by_name(name))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for problem in &resolved {
        for &n in ladder {
            let row = study_row(problem, n, config, solver)?;
            log::info!(
                "{} n={} iterations={} termination={} error={:?}",
                row.problem,
                row.n,
                row.iterations,
                row.termination,
                row.max_error
            );
            rows.push(row);
        }
    }
    if let Some(path) = output {
        write_study_csv(&rows, std::fs::File::create(path)?)?;
    }
    Ok(rows)
}

/// Study description read from a TOML file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub problems: Vec<String>,
    pub ladder: Vec<usize>,
    #[serde(default = "default_solver")]
    pub solver: SolverKind,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Solver settings; `scheme` and `stencil_width` live here too.
    #[serde(default)]
    pub config: SolverConfig,
}

fn default_solver() -> SolverKind {
    SolverKind::Newton
}

impl StudyConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: StudyConfig = toml::from_str(text)?;
        for name in &cfg.problems {
            Problem::by_name(name)?;
        }
        cfg.config.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

pub fn write_report_json<W: Write>(report: &SolveReport, out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, report)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::sample;

    #[test]
    fn max_error_examples() {
        let g = GridSpec::new(2, 9).unwrap();
        let exact = |x: &[f64]| x[0] * x[0] + x[1];
        let mut u = sample(&g, exact).unwrap();
        assert_eq!(max_error(&u, &exact), 0.0);
        let p = g.flat([3, 4, 0]);
        u.values_mut()[p] += 1e-3;
        assert!((max_error(&u, &exact) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn gradient_of_half_norm_is_identity() {
        let g = GridSpec::new(2, 11).unwrap();
        let u = sample(&g, |x| 0.5 * (x[0] * x[0] + x[1] * x[1])).unwrap();
        for s in gradient_map(&u, false).unwrap() {
            assert!((s.gx - s.x).abs() < 1e-12 && (s.gy - s.y).abs() < 1e-12);
        }
        let c = GridFunction::from_values(g, vec![2.5; g.len()]).unwrap();
        for s in gradient_map(&c, false).unwrap() {
            assert_eq!((s.gx, s.gy), (0.0, 0.0));
        }
    }

    #[test]
    fn gradient_map_circle_restriction() {
        let g = GridSpec::new(2, 11).unwrap();
        let u = GridFunction::zeros(g);
        let all = gradient_map(&u, false).unwrap();
        let inside = gradient_map(&u, true).unwrap();
        assert_eq!(all.len(), 121);
        assert!(inside.len() < all.len());
        assert!(inside.iter().all(|s| (s.x - 0.5).powi(2) + (s.y - 0.5).powi(2) <= 0.25 + 1e-12));
        assert!(gradient_map(&GridFunction::zeros(GridSpec::new(3, 5).unwrap()), false).is_err());
    }

    #[test]
    fn blowup_gradient_matches_closed_form() {
        let mut prev = f64::INFINITY;
        for n in [21, 41] {
            let g = GridSpec::new(2, n).unwrap();
            let p = Problem::by_name("blowup_2d").unwrap();
            let u = p.exact_on(&g).unwrap().unwrap();
            let mut worst: f64 = 0.0;
            for s in gradient_map(&u, false).unwrap() {
                if s.x > 0.75 && s.y > 0.75 {
                    continue;
                }
                let r = (2.0 - s.x * s.x - s.y * s.y).sqrt();
                worst = worst.max((s.gx - s.x / r).abs()).max((s.gy - s.y / r).abs());
            }
            assert!(worst < prev / 3.0, "n={n}: {worst} vs {prev}");
            prev = worst;
        }
    }

    #[test]
    fn empty_study_writes_header() {
        let mut buf = Vec::new();
        write_study_csv(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "problem,n,scheme,solver,iterations,seconds,max_error,termination\n"
        );
        let rows = run_study(&["c2_2d".into()], &[], &SolverConfig::default(), SolverKind::Newton, None).unwrap();
        assert!(rows.is_empty());
    }

    #[test]
    fn study_csv_roundtrip() {
        let rows = vec![
            StudyRow {
                problem: "c2_2d".into(),
                n: 31,
                scheme: Scheme::Hybrid,
                solver: SolverKind::Newton,
                iterations: 3,
                seconds: 0.1 + 0.2,
                max_error: Some(2.445e-4 / 3.0),
                termination: Termination::Converged,
            },
            StudyRow {
                problem: "dirac_2d".into(),
                n: 63,
                scheme: Scheme::Monotone,
                solver: SolverKind::SemiImplicit,
                iterations: 500,
                seconds: 1e-300,
                max_error: None,
                termination: Termination::MaxIters,
            },
        ];
        let mut buf = Vec::new();
        write_study_csv(&rows, &mut buf).unwrap();
        let back = read_study_csv(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
        let mut again = Vec::new();
        write_study_csv(&back, &mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn study_config_parsing() {
        let cfg = StudyConfig::parse(
            r#"
problems = ["c2_2d", "cone_2d"]
ladder = [31, 63]
solver = "semi-implicit"

[config]
scheme = "monotone"
newton_tol = 1e-9
"#,
        )
        .unwrap();
        assert_eq!(cfg.ladder, vec![31, 63]);
        assert_eq!(cfg.solver, SolverKind::SemiImplicit);
        assert_eq!(cfg.config.scheme, Scheme::Monotone);
        assert_eq!(cfg.config.newton_tol, 1e-9);
        assert_eq!(cfg.config.stencil_width, 2);
        assert!(StudyConfig::parse("problems = [\"nope\"]\nladder = []").is_err());
        assert!(StudyConfig::parse("problems = []\nladder = []\nextra = 1").is_err());
    }

    #[test]
    fn solver_names_roundtrip() {
        for s in [SolverKind::Newton, SolverKind::Explicit, SolverKind::SemiImplicit] {
            assert_eq!(s.to_string().parse::<SolverKind>().unwrap(), s);
        }
        assert!("gmres".parse::<SolverKind>().is_err());
    }
}
