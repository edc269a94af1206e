//! Outer loops: flexible coordinate descent and the uniform coordinate
//! descent baseline, both recording a per-iteration trace.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{FcdError, Result};
use crate::linalg::{norm, norm_inf};
use crate::linesearch::{backtrack, LineSearchConfig};
use crate::model::{build_model_with_gradient, CurvatureStrategy, LbfgsHistory, ScaleRule};
use crate::problem::{CompositeProblem, CoordinateSubset, Iterate};
use crate::sampling::TauNiceSampler;
use crate::subsolver::{self, InexactnessPolicy, InnerSolver};

/// Relative threshold below which `‖g_S(x;0)‖` counts as zero.
pub const SUBSET_STATIONARY_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    FcdV1,
    FcdV2,
    UcdcV1,
    UcdcV2,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Self::FcdV1, Self::FcdV2, Self::UcdcV1, Self::UcdcV2];

    pub fn name(&self) -> &'static str {
        match self {
            Self::FcdV1 => "fcd-v1",
            Self::FcdV2 => "fcd-v2",
            Self::UcdcV1 => "ucdc-v1",
            Self::UcdcV2 => "ucdc-v2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcdConfig {
    pub tau: usize,
    pub seed: u64,
    pub curvature: CurvatureStrategy,
    pub policy: InexactnessPolicy,
    pub line_search: LineSearchConfig,
    pub max_iterations: usize,
    pub time_budget_s: Option<f64>,
    /// Keep one record per this many iterations (the last one is always kept).
    pub record_every: usize,
    /// Record lemma bounds for every committed step.
    pub instrumented: bool,
    /// Stop when `‖g(x;0)‖_∞ ≤ tol·max(1, ‖x‖_∞)`.
    pub stationarity_tol: f64,
}

impl Default for FcdConfig {
    fn default() -> Self {
        Self {
            tau: 1,
            seed: 0,
            curvature: CurvatureStrategy::DiagonalHessian { ridge: 0.0 },
            policy: InexactnessPolicy {
                solver: InnerSolver::ClosedFormDiagonal,
                ..Default::default()
            },
            line_search: LineSearchConfig::default(),
            max_iterations: 1000,
            time_budget_s: None,
            record_every: 1,
            instrumented: false,
            stationarity_tol: 1e-8,
        }
    }
}

impl FcdConfig {
    /// Default block size `⌈0.001·N⌉`.
    pub fn default_tau(n: usize) -> usize {
        n.div_ceil(1000).max(1)
    }

    /// Diagonal Hessian, closed-form subproblem solve.
    pub fn fcd_v1(tau: usize) -> Self {
        Self {
            tau,
            curvature: CurvatureStrategy::DiagonalHessian { ridge: 0.0 },
            policy: InexactnessPolicy {
                solver: InnerSolver::ClosedFormDiagonal,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    /// Principal minor plus `10⁻⁶ I`, iterative inexact subproblem solve.
    pub fn fcd_v2(tau: usize) -> Self {
        Self {
            tau,
            curvature: CurvatureStrategy::PrincipalMinor { ridge: 1e-6 },
            policy: InexactnessPolicy {
                eta: 0.9,
                solver: InnerSolver::ProximalCoordinate,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.tau == 0 || self.tau > n {
            return Err(FcdError::InvalidParameter(format!(
                "tau must lie in [1, {n}], got {}",
                self.tau
            )));
        }
        if self.max_iterations == 0 {
            return Err(FcdError::InvalidParameter("iteration budget must be > 0".into()));
        }
        if let Some(t) = self.time_budget_s {
            if !(t > 0.0) {
                return Err(FcdError::InvalidParameter("time budget must be > 0".into()));
            }
        }
        if self.record_every == 0 {
            return Err(FcdError::InvalidParameter("record_every must be >= 1".into()));
        }
        self.curvature.validate()?;
        self.policy.validate()?;
        self.line_search.validate()?;
        if self.policy.solver == InnerSolver::ClosedFormDiagonal && !self.curvature.is_diagonal() {
            return Err(FcdError::NotDiagonal);
        }
        Ok(())
    }
}

/// Quantities from the step-size and direction-norm lemmas for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepBounds {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub subset_lipschitz: f64,
    /// `min(1, (1−θ)λ_S/(2L_S))`
    pub alpha_floor: f64,
    pub direction_norm: f64,
    /// `(1−η)‖g_S(x;0)‖/(1+2Λ_S)`
    pub direction_floor: f64,
    /// `θ(1−θ)(λ_S²/4L_S)‖t‖²`
    pub decrease_floor: f64,
    pub decrease: f64,
}

impl StepBounds {
    pub fn alpha_ok(&self, alpha: f64) -> bool {
        alpha >= self.alpha_floor
    }

    pub fn direction_ok(&self) -> bool {
        self.direction_norm >= self.direction_floor
    }

    pub fn decrease_ok(&self) -> bool {
        self.decrease > self.decrease_floor
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub subset_size: usize,
    /// `F(x_{k+1})`
    pub objective: f64,
    pub model_delta: f64,
    pub residual_norm: f64,
    pub baseline_norm: f64,
    pub alpha: f64,
    pub backtracks: usize,
    pub inner_iterations: usize,
    pub time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<StepBounds>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    IterationBudget,
    TimeBudget,
    Stationary,
    /// Every coordinate residual is at round-off level but the configured
    /// tolerance was not met.
    SubsetStationary,
    Failed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_s: f64,
    /// Validation, starting point and (for the baseline) Lipschitz constants.
    pub setup_s: f64,
    /// Sampling, subset gradient and curvature model.
    pub model_s: f64,
    pub inner_s: f64,
    /// Backtracking trials, each an incremental evaluation of `F`.
    pub line_search_s: f64,
    /// Forming `A_S t` and committing the step to the cached state.
    pub update_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub algorithm: String,
    pub config: FcdConfig,
    pub initial_objective: f64,
    pub records: Vec<IterationRecord>,
    pub final_x: Vec<f64>,
    pub final_objective: f64,
    pub termination: Termination,
    /// Committed steps.
    pub iterations: usize,
    /// Fallback exact solves taken in lenient mode.
    pub fallbacks: usize,
    pub timing: Timing,
}

impl RunTrace {
    /// Number of iterations whose accepted step was `α = 1`.
    pub fn unit_steps(&self) -> usize {
        self.records.iter().filter(|r| r.alpha == 1.0).count()
    }
}

/// A run that stopped on an error, with everything recorded up to then.
#[derive(Debug, Clone, Error)]
#[error("{error} (after {} iterations)", trace.iterations)]
pub struct RunFailure {
    pub error: FcdError,
    pub trace: Box<RunTrace>,
}

impl From<RunFailure> for FcdError {
    fn from(f: RunFailure) -> Self {
        f.error
    }
}

pub type RunResult = std::result::Result<RunTrace, RunFailure>;

fn baseline_norm(problem: &CompositeProblem, grad: &[f64], x_s: &[f64]) -> f64 {
    let reg = problem.regularizer();
    grad.iter()
        .zip(x_s)
        .map(|(&g, &x)| {
            let r = g + reg.conjugate_prox(x - g);
            r * r
        })
        .sum::<f64>()
        .sqrt()
}

/// Coordinate blocks for the baseline: τ-nice subsets, or a fixed
/// partition chosen uniformly.
enum BlockSource {
    Nice(TauNiceSampler),
    Fixed { blocks: Vec<CoordinateSubset>, rng: ChaCha8Rng },
}

impl BlockSource {
    fn next(&mut self) -> CoordinateSubset {
        match self {
            Self::Nice(s) => s.sample(),
            Self::Fixed { blocks, rng } => blocks[rng.random_range(0..blocks.len())].clone(),
        }
    }
}

/// How each step's direction and step size are obtained.
enum StepRule<'a> {
    Fcd { history: Option<LbfgsHistory> },
    Ucdc { lipschitz: &'a [f64] },
}

struct Runner<'p, 'a> {
    problem: &'p CompositeProblem,
    config: &'a FcdConfig,
    algorithm: String,
    iterate: Iterate<'p>,
    source: BlockSource,
    rule: StepRule<'a>,
    start: Instant,
    timing: Timing,
    records: Vec<IterationRecord>,
    initial_objective: f64,
    iterations: usize,
    fallbacks: usize,
    pending: Option<IterationRecord>,
}

impl<'p, 'a> Runner<'p, 'a> {
    fn finish(mut self, termination: Termination) -> RunTrace {
        if let Some(r) = self.pending.take() {
            self.records.push(r);
        }
        self.timing.total_s = self.start.elapsed().as_secs_f64();
        RunTrace {
            algorithm: self.algorithm,
            config: self.config.clone(),
            initial_objective: self.initial_objective,
            records: self.records,
            final_objective: self.iterate.objective(),
            final_x: self.iterate.into_x(),
            termination,
            iterations: self.iterations,
            fallbacks: self.fallbacks,
            timing: self.timing,
        }
    }

    fn stationary(&self) -> bool {
        let scale = norm_inf(self.iterate.x()).max(1.0);
        self.iterate.stationarity_inf_norm() <= self.config.stationarity_tol * scale
    }

    fn run(mut self) -> RunResult {
        let n = self.problem.dim();
        let tau = self.config.tau;
        let check_every = (n / tau).max(1);
        let resample_cap = (n / tau).max(1);
        self.iterate.set_refresh_interval(10 * check_every);
        let mut k = 0;
        loop {
            if k >= self.config.max_iterations {
                return Ok(self.finish(Termination::IterationBudget));
            }
            if let Some(budget) = self.config.time_budget_s {
                if self.start.elapsed().as_secs_f64() >= budget {
                    return Ok(self.finish(Termination::TimeBudget));
                }
            }
            if k % check_every == 0 && self.stationary() {
                return Ok(self.finish(Termination::Stationary));
            }

            let t0 = Instant::now();
            let mut skipped = 0;
            let (subset, grad, base) = loop {
                let s = self.source.next();
                let g = self.iterate.partial_gradient(&s);
                let x_s = s.gather(self.iterate.x());
                let base = baseline_norm(self.problem, &g, &x_s);
                if base > SUBSET_STATIONARY_TOL * norm_inf(&x_s).max(1.0) {
                    break (s, g, base);
                }
                skipped += 1;
                if skipped > resample_cap {
                    // Sampled blocks keep missing the few coordinates that
                    // can still move; decide with the full residual.
                    if self.stationary() {
                        return Ok(self.finish(Termination::Stationary));
                    }
                    let scale = norm_inf(self.iterate.x()).max(1.0);
                    if self.iterate.stationarity_inf_norm() <= 2.0 * SUBSET_STATIONARY_TOL * scale {
                        return Ok(self.finish(Termination::SubsetStationary));
                    }
                    skipped = 0;
                }
            };

            if let Err(error) = self.step(k, &subset, grad, base, t0) {
                let trace = Box::new(self.finish(Termination::Failed));
                return Err(RunFailure { error, trace });
            }
            k += 1;
        }
    }

    fn step(&mut self, k: usize, subset: &CoordinateSubset, grad: Vec<f64>, base: f64, t0: Instant) -> Result<()> {
        let config = self.config;
        let (curvature, history) = match &self.rule {
            StepRule::Fcd { history } => (config.curvature, history.as_ref()),
            StepRule::Ucdc { lipschitz } => {
                let nu: f64 = subset.indices().iter().map(|&i| lipschitz[i]).sum();
                (
                    CurvatureStrategy::ScaledIdentity {
                        scale: ScaleRule::Constant { nu },
                    },
                    None,
                )
            }
        };
        let model = build_model_with_gradient(&mut self.iterate, subset, grad, &curvature, history)?;
        let t1 = Instant::now();
        self.timing.model_s += (t1 - t0).as_secs_f64();

        let cert = match self.rule {
            StepRule::Fcd { .. } => subsolver::solve(&model, &config.policy)?,
            StepRule::Ucdc { .. } => subsolver::solve_closed_form_diagonal(&model)?,
        };
        if cert.fallback {
            self.fallbacks += 1;
        }
        let t2 = Instant::now();
        self.timing.inner_s += (t2 - t1).as_secs_f64();

        let step = self.iterate.prepare(subset, cert.t.clone())?;
        let t3 = Instant::now();
        let (alpha, backtracks) = match self.rule {
            StepRule::Fcd { .. } => {
                let out = backtrack(&self.iterate, &step, &config.line_search)?;
                (out.alpha, out.backtracks)
            }
            StepRule::Ucdc { .. } => (1.0, 0),
        };
        let t4 = Instant::now();
        match self.rule {
            StepRule::Fcd { .. } => self.timing.line_search_s += (t4 - t3).as_secs_f64(),
            StepRule::Ucdc { .. } => self.timing.update_s += (t4 - t3).as_secs_f64(),
        }

        let lbfgs_grad_old = match self.rule {
            StepRule::Fcd { history: Some(_) } => Some(model.gradient().to_vec()),
            _ => None,
        };
        let decrease = self.iterate.commit(&step, alpha);
        self.timing.update_s += ((t3 - t2) + t4.elapsed()).as_secs_f64();
        self.iterations += 1;
        if let (Some(g_old), StepRule::Fcd { history: Some(h) }) = (lbfgs_grad_old, &mut self.rule) {
            let g_new = self.iterate.partial_gradient(subset);
            let y = g_new.iter().zip(&g_old).map(|(a, b)| a - b).collect();
            let s = cert.t.iter().map(|v| alpha * v).collect();
            h.push(subset, s, y);
        }

        let bounds = config.instrumented.then(|| {
            let theta = config.line_search.theta;
            let eta = match self.rule {
                StepRule::Fcd { .. } if !cert.fallback => config.policy.eta,
                _ => 0.0,
            };
            let l_s = self.problem.subset_lipschitz(subset);
            let lam = model.lambda_min();
            let tn = norm(&cert.t);
            StepBounds {
                lambda_min: lam,
                lambda_max: model.lambda_max(),
                subset_lipschitz: l_s,
                alpha_floor: ((1.0 - theta) * lam / (2.0 * l_s)).min(1.0),
                direction_norm: tn,
                direction_floor: (1.0 - eta) * base / (1.0 + 2.0 * model.lambda_max()),
                decrease_floor: theta * (1.0 - theta) * lam * lam / (4.0 * l_s) * tn * tn,
                decrease,
            }
        });

        let record = IterationRecord {
            k,
            subset_size: subset.len(),
            objective: self.iterate.objective(),
            model_delta: cert.model_delta,
            residual_norm: cert.residual_norm,
            baseline_norm: base,
            alpha,
            backtracks,
            inner_iterations: cert.inner_iterations,
            time_s: self.start.elapsed().as_secs_f64(),
            bounds,
        };
        if k % config.record_every == 0 {
            self.records.push(record);
            self.pending = None;
        } else {
            self.pending = Some(record);
        }
        Ok(())
    }
}

fn start_iterate<'p>(problem: &'p CompositeProblem, x0: Option<Vec<f64>>) -> Result<Iterate<'p>> {
    problem.iterate(x0.unwrap_or_else(|| vec![0.0; problem.dim()]))
}

fn failure_without_trace(error: FcdError, algorithm: &str, config: &FcdConfig) -> RunFailure {
    RunFailure {
        error,
        trace: Box::new(RunTrace {
            algorithm: algorithm.to_string(),
            config: config.clone(),
            initial_objective: f64::NAN,
            records: Vec::new(),
            final_x: Vec::new(),
            final_objective: f64::NAN,
            termination: Termination::Failed,
            iterations: 0,
            fallbacks: 0,
            timing: Timing::default(),
        }),
    }
}

/// Flexible coordinate descent from `x₀ = 0`.
pub fn fcd_run(problem: &CompositeProblem, config: &FcdConfig) -> RunResult {
    fcd_run_from(problem, config, None)
}

pub fn fcd_run_from(problem: &CompositeProblem, config: &FcdConfig, x0: Option<Vec<f64>>) -> RunResult {
    let name = "fcd";
    let setup = || -> Result<(Iterate<'_>, TauNiceSampler)> {
        config.validate(problem.dim())?;
        Ok((
            start_iterate(problem, x0)?,
            TauNiceSampler::new(problem.dim(), config.tau, config.seed)?,
        ))
    };
    let start = Instant::now();
    let (iterate, sampler) = setup().map_err(|e| failure_without_trace(e, name, config))?;
    let history = match config.curvature {
        CurvatureStrategy::LimitedMemoryQn { memory, .. } => Some(LbfgsHistory::new(memory)),
        _ => None,
    };
    let initial_objective = iterate.objective();
    Runner {
        problem,
        config,
        algorithm: name.to_string(),
        iterate,
        source: BlockSource::Nice(sampler),
        rule: StepRule::Fcd { history },
        timing: Timing {
            setup_s: start.elapsed().as_secs_f64(),
            ..Default::default()
        },
        start,
        records: Vec::new(),
        initial_objective,
        iterations: 0,
        fallbacks: 0,
        pending: None,
    }
    .run()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UcdcVariant {
    /// Single coordinates, `H = L_i`.
    V1,
    /// Fixed blocks of size τ, `H = (Σ_{j∈S} L_j) I`.
    V2,
}

/// Uniform coordinate descent with exact separable steps and `α = 1`.
/// The Lipschitz constants are recomputed inside the timed region.
pub fn ucdc_run(problem: &CompositeProblem, config: &FcdConfig, variant: UcdcVariant) -> RunResult {
    ucdc_run_from(problem, config, variant, None)
}

pub fn ucdc_run_from(
    problem: &CompositeProblem,
    config: &FcdConfig,
    variant: UcdcVariant,
    x0: Option<Vec<f64>>,
) -> RunResult {
    let n = problem.dim();
    let mut config = config.clone();
    if variant == UcdcVariant::V1 {
        config.tau = 1;
    }
    config.curvature = CurvatureStrategy::ScaledIdentity {
        scale: ScaleRule::SubsetLipschitz,
    };
    config.policy.solver = InnerSolver::ClosedFormDiagonal;
    let name = match variant {
        UcdcVariant::V1 => "ucdc-v1",
        UcdcVariant::V2 => "ucdc-v2",
    };
    let start = Instant::now();
    let lipschitz = problem.compute_lipschitz_constants();
    let setup = || -> Result<(Iterate<'_>, BlockSource)> {
        config.validate(n)?;
        let iterate = start_iterate(problem, x0)?;
        let source = match variant {
            UcdcVariant::V1 => BlockSource::Nice(TauNiceSampler::new(n, 1, config.seed)?),
            UcdcVariant::V2 => {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut rng);
                let count = n.div_ceil(config.tau);
                let blocks = (0..count)
                    .map(|b| {
                        // Near-equal sizes: block b takes perm[b*n/count .. (b+1)*n/count].
                        let idx = perm[b * n / count..(b + 1) * n / count].to_vec();
                        CoordinateSubset::from_unsorted(idx, n)
                    })
                    .collect::<Result<Vec<_>>>()?;
                BlockSource::Fixed { blocks, rng }
            }
        };
        Ok((iterate, source))
    };
    let (iterate, source) = setup().map_err(|e| failure_without_trace(e, name, &config))?;
    let initial_objective = iterate.objective();
    let setup_s = start.elapsed().as_secs_f64();
    Runner {
        problem,
        config: &config,
        algorithm: name.to_string(),
        iterate,
        source,
        rule: StepRule::Ucdc { lipschitz: &lipschitz },
        timing: Timing {
            setup_s,
            ..Default::default()
        },
        start,
        records: Vec::new(),
        initial_objective,
        iterations: 0,
        fallbacks: 0,
        pending: None,
    }
    .run()
}

/// Run one of the four named algorithm presets. `config` supplies seed,
/// budgets, line search and η; `tau` is taken from it for the block methods.
pub fn run_algorithm(problem: &CompositeProblem, algorithm: Algorithm, config: &FcdConfig) -> RunResult {
    let mut trace = match algorithm {
        Algorithm::FcdV1 | Algorithm::FcdV2 => {
            let preset = if algorithm == Algorithm::FcdV1 {
                FcdConfig::fcd_v1(config.tau)
            } else {
                FcdConfig::fcd_v2(config.tau)
            };
            let cfg = FcdConfig {
                curvature: preset.curvature,
                policy: InexactnessPolicy {
                    solver: preset.policy.solver,
                    ..config.policy
                },
                ..config.clone()
            };
            fcd_run(problem, &cfg)
        }
        Algorithm::UcdcV1 => ucdc_run(problem, config, UcdcVariant::V1),
        Algorithm::UcdcV2 => ucdc_run(problem, config, UcdcVariant::V2),
    };
    match &mut trace {
        Ok(t) => t.algorithm = algorithm.name().to_string(),
        Err(f) => f.trace.algorithm = algorithm.name().to_string(),
    }
    trace
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regularizer::SeparableRegularizer;
    use crate::problem::SmoothLoss;
    use crate::sparse::SparseDesignMatrix;

    fn scalar_lasso() -> CompositeProblem {
        let loss = SmoothLoss::quadratic(SparseDesignMatrix::identity(1), vec![3.0]).unwrap();
        CompositeProblem::new(loss, SeparableRegularizer::l1(1.0).unwrap()).unwrap()
    }

    #[test]
    fn optimal_start_commits_nothing() {
        let p = scalar_lasso();
        let t = fcd_run_from(&p, &FcdConfig::default(), Some(vec![2.0])).unwrap();
        assert_eq!(t.iterations, 0);
        assert_eq!(t.termination, Termination::Stationary);
    }

    #[test]
    fn scalar_lasso_converges() {
        let p = scalar_lasso();
        for cfg in [FcdConfig::fcd_v1(1), FcdConfig::fcd_v2(1)] {
            let t = fcd_run(&p, &cfg).unwrap();
            assert!((t.final_x[0] - 2.0).abs() < 1e-10);
            assert!((t.final_objective - 2.5).abs() <= 1e-10);
        }
    }

    #[test]
    fn closed_form_needs_diagonal_curvature() {
        let p = scalar_lasso();
        let cfg = FcdConfig {
            curvature: CurvatureStrategy::PrincipalMinor { ridge: 1e-6 },
            ..Default::default()
        };
        let err = fcd_run(&p, &cfg).unwrap_err();
        assert_eq!(err.error, FcdError::NotDiagonal);
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(Algorithm::parse(a.name()), Some(a));
        }
        assert_eq!(Algorithm::parse("nope"), None);
    }
}
