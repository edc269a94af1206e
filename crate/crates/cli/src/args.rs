//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "fcd", version, about = "Flexible coordinate descent: solve, compare, verify iteration bounds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run FCD with an explicit configuration.
    Solve {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run several algorithm presets on the same problem.
    Compare {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Comma-separated subset of fcd-v1, fcd-v2, ucdc-v1, ucdc-v2.
        #[arg(long, value_delimiter = ',', default_value = "fcd-v1,fcd-v2,ucdc-v1,ucdc-v2")]
        algos: Vec<String>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Monte-Carlo check of a theoretical iteration bound.
    VerifyBounds {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// C-N-i, C-N-ii, SC-N, C-S or SC-S.
        #[arg(long, default_value = "SC-N")]
        theorem: String,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// Target accuracy; defaults to 1e-3 times the initial gap.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = 0.1)]
        rho: f64,
        /// Run this many iterations instead of the theoretical K.
        #[arg(long)]
        iterations: Option<usize>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Write a synthetic instance: its recipe as JSON, plus a LIBSVM file
    /// for logistic instances.
    GenData {
        #[command(flatten)]
        synthetic: SyntheticArgs,
        /// Output stem; `.json` and `.libsvm` are appended.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Quadratic,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegArg {
    None,
    L1,
    L2,
    Elastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HessianArg {
    Identity,
    Scaled,
    Diag,
    Minor,
    Lbfgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InnerArg {
    Closed,
    Cg,
    Prox,
}

#[derive(Debug, Clone, Args)]
pub struct SyntheticArgs {
    /// Generate the problem instead of reading it.
    #[arg(long, value_enum)]
    pub synthetic: Option<LossArg>,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 1000)]
    pub m: usize,
    #[arg(long, default_value_t = 1e4)]
    pub condition: f64,
    #[arg(long, default_value_t = 1.0)]
    pub density: f64,
    /// Fraction of nonzeros in a planted quadratic solution.
    #[arg(long, default_value_t = 0.1)]
    pub support: f64,
    #[arg(long, default_value_t = 0.0)]
    pub margin: f64,
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ProblemArgs {
    /// LIBSVM file.
    #[arg(long, conflicts_with_all = ["recipe", "synthetic"])]
    pub data: Option<PathBuf>,
    /// Recipe JSON written by `gen-data`.
    #[arg(long, conflicts_with = "synthetic")]
    pub recipe: Option<PathBuf>,
    #[command(flatten)]
    pub synthetic: SyntheticArgs,
    /// Number of features when reading LIBSVM data (default: max index).
    #[arg(long)]
    pub features: Option<usize>,
    /// Loss for `--data`; generated problems carry their own.
    #[arg(long, value_enum, default_value = "logistic")]
    pub loss: LossArg,
    #[arg(long, value_enum, default_value = "l1")]
    pub reg: RegArg,
    /// Regularization weight (the l1 weight for elastic net).
    #[arg(long, default_value_t = 0.1)]
    pub c: f64,
    /// Squared-l2 weight for `--reg elastic`.
    #[arg(long, default_value_t = 0.0)]
    pub l2: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Block size; defaults to ceil(0.001 N).
    #[arg(long)]
    pub tau: Option<usize>,
    #[arg(long, value_enum, default_value = "diag")]
    pub hessian: HessianArg,
    /// Ridge added to the curvature model (0 for diag, 1e-6 otherwise).
    #[arg(long)]
    pub ridge: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub lbfgs_mem: usize,
    #[arg(long, default_value_t = 0.9)]
    pub eta: f64,
    /// Inner solver; closed form for diagonal models, prox otherwise.
    #[arg(long, value_enum)]
    pub inner: Option<InnerArg>,
    #[arg(long)]
    pub inner_max: Option<usize>,
    #[arg(long)]
    pub strict_certificates: bool,
    #[arg(long, default_value_t = 1e-3)]
    pub theta: f64,
    #[arg(long, default_value_t = 200)]
    pub max_backtracks: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Iteration budget.
    #[arg(long, default_value_t = 1000)]
    pub budget: usize,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    pub time_budget: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub record_every: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub stationarity_tol: f64,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output directory (default: $FCD_OUTPUT_DIR, else ./fcd-out).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
