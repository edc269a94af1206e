//! Command-line driver for the `fcd` solver library.
//!
//! Exit codes: 0 on success, 2 on usage or configuration errors, 3 when a
//! solver run fails.

mod args;

use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use rayon::prelude::*;
use thiserror::Error;

use fcd::analysis::{
    iteration_bound, levelset_radius, validate_bound, BoundInputs, BoundRequest, ComplexityConstants, Theorem,
};
use fcd::data::{generate_synthetic, read_libsvm, write_libsvm, SyntheticKind, SyntheticRecipe};
use fcd::driver::{fcd_run, run_algorithm, Algorithm, FcdConfig, RunResult, RunTrace};
use fcd::linesearch::LineSearchConfig;
use fcd::model::{CurvatureStrategy, ScaleRule};
use fcd::output::{plot_csv, write_run_outputs};
use fcd::problem::{CompositeProblem, SmoothLoss};
use fcd::regularizer::SeparableRegularizer;
use fcd::subsolver::{InexactnessPolicy, InnerSolver};
use fcd::FcdError;

pub use args::{Cli, Command};
use args::{HessianArg, InnerArg, LossArg, OutputArgs, ProblemArgs, RegArg, SolverArgs, SyntheticArgs};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "FCD_OUTPUT_DIR";
const DEFAULT_OUTPUT_DIR: &str = "fcd-out";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Solver(_) => 3,
        }
    }
}

impl From<FcdError> for CliError {
    fn from(e: FcdError) -> Self {
        Self::Config(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parse `argv` (program name first) and execute. Returns the exit code.
pub fn run_cli(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Solve { problem, solver, output } => solve(&problem, &solver, &output),
        Command::Compare { problem, solver, algos, output } => compare(&problem, &solver, &algos, &output),
        Command::VerifyBounds { problem, solver, theorem, trials, epsilon, rho, iterations, output } => {
            let theorem = Theorem::parse(&theorem)
                .ok_or_else(|| CliError::Config(format!("unknown theorem {theorem:?}")))?;
            verify_bounds(&problem, &solver, theorem, trials, epsilon, rho, iterations, &output)
        }
        Command::GenData { synthetic, out } => gen_data(&synthetic, &out),
    }
}

struct Loaded {
    problem: CompositeProblem,
    x_star: Option<Vec<f64>>,
    f_star: Option<f64>,
}

fn regularizer(args: &ProblemArgs) -> CliResult<SeparableRegularizer> {
    Ok(match args.reg {
        RegArg::None => SeparableRegularizer::Zero,
        RegArg::L1 => SeparableRegularizer::l1(args.c)?,
        RegArg::L2 => SeparableRegularizer::squared_l2(args.c)?,
        RegArg::Elastic => SeparableRegularizer::elastic_net(args.c, args.l2)?,
    })
}

fn recipe_from(args: &SyntheticArgs, kind: LossArg) -> SyntheticRecipe {
    let kind = match kind {
        LossArg::Quadratic => SyntheticKind::Quadratic {
            n: args.n,
            m: args.m,
            condition: args.condition,
            density: args.density,
            support: args.support,
        },
        LossArg::Logistic => SyntheticKind::Logistic { n: args.n, m: args.m, margin: args.margin, density: args.density },
    };
    SyntheticRecipe { kind, seed: args.data_seed }
}

fn load_problem(args: &ProblemArgs) -> CliResult<Loaded> {
    let reg = regularizer(args)?;
    let recipe = if let Some(path) = &args.recipe {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let r: SyntheticRecipe = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Some(r)
    } else {
        args.synthetic.synthetic.map(|k| recipe_from(&args.synthetic, k))
    };
    if let Some(r) = recipe {
        let s = generate_synthetic(&r, reg)?;
        return Ok(Loaded { problem: s.problem, x_star: s.x_star, f_star: s.f_star });
    }
    let path = args
        .data
        .as_ref()
        .ok_or_else(|| CliError::Config("one of --data, --recipe or --synthetic is required".into()))?;
    let (a, y) = read_libsvm(path, args.features)?;
    let loss = match args.loss {
        LossArg::Quadratic => SmoothLoss::quadratic(a, y)?,
        LossArg::Logistic => SmoothLoss::logistic(a, y)?,
    };
    Ok(Loaded { problem: CompositeProblem::new(loss, reg)?, x_star: None, f_star: None })
}

fn build_config(args: &SolverArgs, n: usize) -> CliResult<FcdConfig> {
    let ridge = args.ridge.unwrap_or(match args.hessian {
        HessianArg::Diag => 0.0,
        _ => 1e-6,
    });
    let curvature = match args.hessian {
        HessianArg::Identity => CurvatureStrategy::Identity,
        HessianArg::Scaled => CurvatureStrategy::ScaledIdentity { scale: ScaleRule::SubsetLipschitz },
        HessianArg::Diag => CurvatureStrategy::DiagonalHessian { ridge },
        HessianArg::Minor => CurvatureStrategy::PrincipalMinor { ridge },
        HessianArg::Lbfgs => CurvatureStrategy::LimitedMemoryQn { memory: args.lbfgs_mem, ridge },
    };
    let solver = match args.inner {
        Some(InnerArg::Closed) => InnerSolver::ClosedFormDiagonal,
        Some(InnerArg::Cg) => InnerSolver::ConjugateGradientSmooth,
        Some(InnerArg::Prox) => InnerSolver::ProximalCoordinate,
        None if curvature.is_diagonal() => InnerSolver::ClosedFormDiagonal,
        None => InnerSolver::ProximalCoordinate,
    };
    let cfg = FcdConfig {
        tau: args.tau.unwrap_or_else(|| FcdConfig::default_tau(n)),
        seed: args.seed,
        curvature,
        policy: InexactnessPolicy {
            eta: args.eta,
            max_inner_iterations: args.inner_max,
            solver,
            strict: args.strict_certificates,
        },
        line_search: LineSearchConfig { theta: args.theta, max_backtracks: args.max_backtracks },
        max_iterations: args.budget,
        time_budget_s: args.time_budget,
        record_every: args.record_every,
        instrumented: false,
        stationarity_tol: args.stationarity_tol,
    };
    cfg.validate(n)?;
    Ok(cfg)
}

fn output_dir(args: &OutputArgs) -> PathBuf {
    args.out
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

fn io_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// Write the trace files and report a failed run as a solver error.
fn emit(dir: &Path, stem: &str, result: RunResult) -> CliResult<RunTrace> {
    match result {
        Ok(trace) => {
            write_run_outputs(dir, stem, &trace).map_err(io_err)?;
            println!(
                "{stem}: F = {:.12e} after {} iterations ({:?}, {:.3}s)",
                trace.final_objective, trace.iterations, trace.termination, trace.timing.total_s
            );
            Ok(trace)
        }
        Err(f) => {
            write_run_outputs(dir, stem, &f.trace).map_err(io_err)?;
            Err(CliError::Solver(format!("{stem}: {f}")))
        }
    }
}

fn solve(problem: &ProblemArgs, solver: &SolverArgs, output: &OutputArgs) -> CliResult<()> {
    let loaded = load_problem(problem)?;
    let cfg = build_config(solver, loaded.problem.dim())?;
    let dir = output_dir(output);
    emit(&dir, "fcd", fcd_run(&loaded.problem, &cfg))?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn compare(problem: &ProblemArgs, solver: &SolverArgs, algos: &[String], output: &OutputArgs) -> CliResult<()> {
    let algorithms = algos
        .iter()
        .map(|a| Algorithm::parse(a).ok_or_else(|| CliError::Config(format!("unknown algorithm {a:?}"))))
        .collect::<CliResult<Vec<_>>>()?;
    if algorithms.is_empty() {
        return Err(CliError::Config("--algos is empty".into()));
    }
    let loaded = load_problem(problem)?;
    let cfg = build_config(solver, loaded.problem.dim())?;
    let dir = output_dir(output);
    let results: Vec<RunResult> = algorithms.par_iter().map(|&a| run_algorithm(&loaded.problem, a, &cfg)).collect();
    let mut traces = Vec::new();
    let mut failure = None;
    for (a, r) in algorithms.iter().zip(results) {
        match emit(&dir, a.name(), r) {
            Ok(t) => traces.push(t),
            Err(e) => {
                eprintln!("error: {e}");
                failure.get_or_insert(e);
            }
        }
    }
    fs::write(dir.join("compare_plot.csv"), plot_csv(&traces)).map_err(io_err)?;
    println!("wrote {}", dir.display());
    failure.map_or(Ok(()), Err)
}

#[allow(clippy::too_many_arguments)]
fn verify_bounds(
    problem: &ProblemArgs,
    solver: &SolverArgs,
    theorem: Theorem,
    trials: usize,
    epsilon: Option<f64>,
    rho: f64,
    iterations: Option<usize>,
    output: &OutputArgs,
) -> CliResult<()> {
    let loaded = load_problem(problem)?;
    let p = &loaded.problem;
    let n = p.dim();
    let cfg = build_config(solver, n)?;
    // Without an analytic optimum a long, tightly converged run stands in.
    let (f_star, x_star) = match (loaded.f_star, loaded.x_star) {
        (Some(f), Some(x)) => (f, x),
        _ => {
            let reference = FcdConfig {
                max_iterations: cfg.max_iterations.saturating_mul(100),
                stationarity_tol: 1e-12,
                record_every: usize::MAX,
                ..cfg.clone()
            };
            let t = fcd_run(p, &reference).map_err(|e| CliError::Solver(format!("reference run: {e}")))?;
            (t.final_objective, t.final_x)
        }
    };
    let x0 = vec![0.0; n];
    let gap = p.eval_objective(&x0)? - f_star;
    let epsilon = epsilon.unwrap_or(1e-3 * gap);
    let needs_radius = matches!(
        theorem,
        Theorem::ConvexNonsmoothI | Theorem::ConvexNonsmoothII | Theorem::ConvexSmooth
    );
    let radius = if needs_radius { Some(levelset_radius(p, &x_star, &x0, None, 64, cfg.seed)?) } else { None };
    let constants = ComplexityConstants::for_problem(p, &cfg)?;
    let inputs = BoundInputs { n, tau: cfg.tau, epsilon, rho, gap, radius };
    let k = iteration_bound(theorem, &constants, &inputs)?;
    let request = BoundRequest { theorem, epsilon, rho, iterations: iterations.unwrap_or(k), f_star };
    let report = validate_bound(p, &cfg, &request, trials)?;
    let dir = output_dir(output);
    fs::create_dir_all(&dir).map_err(io_err)?;
    let json = serde_json::json!({ "theoretical_k": k, "constants": constants, "report": report });
    let path = dir.join(format!("bounds_{}.json", theorem.tag()));
    fs::write(&path, serde_json::to_string_pretty(&json).map_err(io_err)?).map_err(io_err)?;
    println!(
        "{} K = {k}: {}/{} within {epsilon:.3e} (frequency {:.3}, threshold {:.3}) {}",
        theorem.tag(),
        report.successes,
        report.trials,
        report.frequency,
        report.threshold,
        if report.pass { "PASS" } else { "FAIL" }
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn gen_data(args: &SyntheticArgs, out: &Path) -> CliResult<()> {
    let kind = args
        .synthetic
        .ok_or_else(|| CliError::Config("gen-data needs --synthetic quadratic|logistic".into()))?;
    let recipe = recipe_from(args, kind);
    let s = generate_synthetic(&recipe, SeparableRegularizer::Zero)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    let json = out.with_extension("json");
    fs::write(&json, serde_json::to_string_pretty(&recipe).map_err(io_err)?).map_err(io_err)?;
    println!("wrote {}", json.display());
    // LIBSVM labels are classes, so only logistic data has a file form.
    if kind == LossArg::Logistic {
        let path = out.with_extension("libsvm");
        write_libsvm(&path, s.problem.loss().matrix(), s.problem.loss().targets())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
