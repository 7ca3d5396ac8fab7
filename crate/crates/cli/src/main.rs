//! odesens: sensitivity estimates and worst-case error bounds for component
//! errors in ODE right-hand sides.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 sweep finished with failed rows.

mod artifacts;
mod config;
mod custom;
mod runner;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{resolve, CommandKind, FileConfig, Overrides, ProblemChoice};

/// Failures that map onto process exit codes.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Numerical(m) => write!(f, "{m}"),
        }
    }
}

const EXIT_PARTIAL_SWEEP: u8 = 4;
const CHECK_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "odesens",
    version,
    about = "Sensitivity estimates and worst-case bounds for ODE component errors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one problem at one epsilon and write the artifact tables.
    Run(RunArgs),
    /// Run a list of epsilons and write sweep.csv.
    Sweep(SweepArgs),
    /// Validate analytic derivatives against finite differences.
    Check(CheckArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BuiltinProblem {
    Zermelo,
    Hypersonic,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in benchmark problem.
    #[arg(long, value_enum)]
    problem: Option<BuiltinProblem>,
    /// Custom problem spec file (linear dynamics with lookup components).
    #[arg(long, conflicts_with = "problem")]
    problem_file: Option<PathBuf>,
    /// Output grid resolution; the integration grid for fixed-grid problems.
    #[arg(long)]
    grid_n: Option<usize>,
    /// Relative tolerance; forces the adaptive integrator.
    #[arg(long)]
    rtol: Option<f64>,
    /// Absolute tolerance; forces the adaptive integrator.
    #[arg(long)]
    atol: Option<f64>,
    /// Diagonal of the state weight matrix Q, comma separated.
    #[arg(long, value_delimiter = ',')]
    q_diag: Option<Vec<f64>>,
    /// Component-to-state gain L of the comparison bound.
    #[arg(long)]
    lipschitz: Option<f64>,
    /// Saturation cap for the comparison bound.
    #[arg(long)]
    cap: Option<f64>,
    /// Multistart count for the worst-case QP solver.
    #[arg(long)]
    restarts: Option<usize>,
    /// RNG seed for the QP restarts.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Component error magnitude.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Artifact directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated epsilon list.
    #[arg(long, value_delimiter = ',')]
    eps_list: Option<Vec<f64>>,
    /// Artifact directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Epsilon for the perturbed component (default 1e-2).
    #[arg(long)]
    epsilon: Option<f64>,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(match err {
                CliError::Config(_) => 2,
                CliError::Numerical(_) => 3,
            })
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Check(args) => cmd_check(args),
    }
}

fn load_file(common: &CommonArgs) -> Result<FileConfig, CliError> {
    match &common.config {
        Some(path) => FileConfig::load(path),
        None => Ok(FileConfig::default()),
    }
}

fn make_overrides(
    common: &CommonArgs,
    epsilon: Option<f64>,
    out: Option<PathBuf>,
    eps_list: Option<Vec<f64>>,
) -> Overrides {
    let problem = common
        .problem
        .map(|p| match p {
            BuiltinProblem::Zermelo => ProblemChoice::Zermelo,
            BuiltinProblem::Hypersonic => ProblemChoice::Hypersonic,
        })
        .or_else(|| common.problem_file.clone().map(ProblemChoice::CustomFile));
    Overrides {
        problem,
        epsilon,
        grid_n: common.grid_n,
        rtol: common.rtol,
        atol: common.atol,
        q_diag: common.q_diag.clone(),
        lipschitz: common.lipschitz,
        cap: common.cap,
        restarts: common.restarts,
        seed: common.seed,
        workers: common.workers,
        out,
        eps_list,
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, CliError> {
    let file = load_file(&args.common)?;
    let flags = make_overrides(&args.common, args.epsilon, args.out, None);
    let (cfg, handle) = resolve(file, flags, CommandKind::Run)?;
    let epsilon = cfg.epsilon.expect("run resolves epsilon");
    let problem = handle.build(epsilon);
    let case =
        runner::solve_case(&problem, &cfg).map_err(|e| CliError::Numerical(e.to_string()))?;
    let out = cfg.out.clone().expect("run resolves out");
    artifacts::write_run(&out, &cfg, &problem, &case)?;

    println!("problem {} at epsilon = {:e}", problem.name, epsilon);
    println!("  true L2 error         {:.6e}", case.true_l2);
    println!("  sensitivity estimate  {:.6e}", case.estimate_l2);
    println!("  state bound           {:.6e}", case.state_bound);
    println!("  true QoI error        {:.6e}", case.q_eps - case.q_star);
    println!("  adjoint QoI estimate  {:.6e}", case.qoi_estimate);
    println!("  QoI bound             {:.6e}", case.qoi_bound);
    let label = if case.comparison_scaled {
        "comparison E/L at tf"
    } else {
        "comparison E at tf  "
    };
    let capped = if case.comparison_capped { " (capped)" } else { "" };
    println!(
        "  {label}  {:.6e}{capped}",
        case.comparison.last().copied().unwrap_or(f64::NAN)
    );
    println!("artifacts written to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode, CliError> {
    let file = load_file(&args.common)?;
    let flags = make_overrides(&args.common, None, args.out, args.eps_list);
    let (cfg, handle) = resolve(file, flags, CommandKind::Sweep)?;
    let t0 = Instant::now();
    let rows =
        runner::epsilon_sweep(&handle, &cfg).map_err(|e| CliError::Numerical(e.to_string()))?;
    let out = cfg.out.clone().expect("sweep resolves out");
    let name = handle.build(0.0).name;
    artifacts::write_sweep(&out, &cfg, name, &rows, t0.elapsed().as_secs_f64())?;

    let mut failed = 0usize;
    for row in &rows {
        if let Err(e) = &row.outcome {
            eprintln!("epsilon = {:e} failed: {e}", row.epsilon);
            failed += 1;
        }
    }
    println!(
        "wrote {} rows to {} ({failed} failed)",
        rows.len(),
        out.join("sweep.csv").display()
    );
    if failed == 0 {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(EXIT_PARTIAL_SWEEP))
    }
}

fn cmd_check(args: CheckArgs) -> Result<ExitCode, CliError> {
    let file = load_file(&args.common)?;
    let flags = make_overrides(&args.common, args.epsilon, None, None);
    let (cfg, handle) = resolve(file, flags, CommandKind::Check)?;
    let epsilon = cfg.epsilon.expect("check resolves epsilon");
    let problem = handle.build(epsilon);
    let lines =
        runner::derivative_check(&problem, &cfg).map_err(|e| CliError::Numerical(e.to_string()))?;

    println!(
        "derivative check: {} (epsilon = {:e}, h = {:e})",
        problem.name,
        epsilon,
        odesens_core::fdcheck::DEFAULT_FD_STEP
    );
    let mut worst = 0.0f64;
    for line in &lines {
        let status = if line.max_rel_err <= CHECK_TOL { "OK" } else { "FAIL" };
        println!(
            "  {:<10} {:<22} max rel err {:.3e}  {status}",
            line.block, line.partial, line.max_rel_err
        );
        worst = worst.max(line.max_rel_err);
    }
    if worst <= CHECK_TOL {
        println!("all derivative checks passed (tolerance {CHECK_TOL:e})");
        Ok(ExitCode::SUCCESS)
    } else {
        Err(CliError::Numerical(format!(
            "derivative check failed: worst relative error {worst:.3e} exceeds {CHECK_TOL:e}"
        )))
    }
}
