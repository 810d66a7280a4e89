use std::fs::{self, File};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use monge_ampere::grid::GridSpec;
use monge_ampere::problems::{Problem, CATALOG};
use monge_ampere::reporting::{
    gradient_map, max_error, run_study, solve, write_gradient_csv, write_report_json, SolverKind, StudyConfig,
};
use monge_ampere::{Result, Scheme, SolverConfig, Termination};

#[derive(Parser)]
#[command(name = "ma-solve", about = "Solve det(D²u) = f on the unit box", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one catalog problem and write the solution, gradient map and report.
    Run {
        #[arg(long)]
        problem: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "hybrid")]
        scheme: Scheme,
        #[arg(long, default_value = "newton")]
        solver: SolverKind,
        #[arg(long, default_value_t = 2)]
        stencil_width: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a convergence study described by a TOML file.
    Study {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the output path in the config file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the problem catalog.
    ListProblems,
    /// Write f and the exact solution of a problem sampled on a grid.
    Export {
        #[arg(long)]
        problem: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            problem,
            n,
            scheme,
            solver,
            stencil_width,
            out,
        } => {
            let problem = Problem::by_name(&problem)?;
            let grid = GridSpec::new(problem.dim, n)?;
            let config = SolverConfig {
                scheme,
                stencil_width,
                ..SolverConfig::default()
            };
            let (u, report) = solve(&problem, &grid, &config, solver)?;
            fs::create_dir_all(&out)?;
            u.write_csv(File::create(out.join("solution.csv"))?)?;
            write_report_json(&report, File::create(out.join("report.json"))?)?;
            if grid.dim() == 2 {
                write_gradient_csv(&gradient_map(&u, false)?, File::create(out.join("gradient.csv"))?)?;
            }
            let error = problem.exact.as_ref().map(|e| max_error(&u, e.as_ref()));
            println!(
                "{} n={} scheme={} solver={} iterations={} termination={} seconds={:.3} max_error={}",
                problem.name,
                n,
                scheme,
                solver,
                report.iterations,
                report.termination,
                report.seconds,
                error.map_or("n/a".to_string(), |e| format!("{e:e}"))
            );
            Ok(report.termination != Termination::LinearFailure)
        }
        Command::Study { config, out } => {
            let cfg = StudyConfig::load(&config)?;
            let output = out.or(cfg.output.clone());
            let rows = run_study(&cfg.problems, &cfg.ladder, &cfg.config, cfg.solver, output.as_deref())?;
            if output.is_none() {
                monge_ampere::reporting::write_study_csv(&rows, std::io::stdout())?;
            }
            Ok(rows.iter().all(|r| r.termination != Termination::LinearFailure))
        }
        Command::ListProblems => {
            for name in CATALOG {
                let p = Problem::by_name(name)?;
                println!("{name}\t{}d", p.dim);
            }
            Ok(true)
        }
        Command::Export { problem, n, out } => {
            let problem = Problem::by_name(&problem)?;
            let grid = GridSpec::new(problem.dim, n)?;
            fs::create_dir_all(&out)?;
            problem.rhs_on(&grid)?.write_csv(File::create(out.join("f.csv"))?)?;
            if let Some(exact) = problem.exact_on(&grid) {
                exact?.write_csv(File::create(out.join("exact.csv"))?)?;
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
