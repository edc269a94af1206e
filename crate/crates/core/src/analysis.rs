//! Complexity constants, theoretical iteration counts and Monte-Carlo
//! checks of the high-probability guarantees.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driver::{fcd_run_from, FcdConfig, SUBSET_STATIONARY_TOL};
use crate::error::{FcdError, Result};
use crate::linalg::{norm, norm_inf};
use crate::linesearch::backtrack;
use crate::model::{build_model, CurvatureStrategy, ScaleRule, SubproblemModel};
use crate::problem::{CompositeProblem, CoordinateSubset, Iterate, LossKind};
use crate::sampling::TauNiceSampler;
use crate::subsolver;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Theorem {
    /// Convex nonsmooth, first choice of `(ε, K)`.
    #[serde(rename = "C-N-i")]
    ConvexNonsmoothI,
    /// Convex nonsmooth, second choice of `(ε, K)`.
    #[serde(rename = "C-N-ii")]
    ConvexNonsmoothII,
    #[serde(rename = "SC-N")]
    StronglyConvexNonsmooth,
    #[serde(rename = "C-S")]
    ConvexSmooth,
    #[serde(rename = "SC-S")]
    StronglyConvexSmooth,
}

impl Theorem {
    pub const ALL: [Theorem; 5] = [
        Self::ConvexNonsmoothI,
        Self::ConvexNonsmoothII,
        Self::StronglyConvexNonsmooth,
        Self::ConvexSmooth,
        Self::StronglyConvexSmooth,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            Self::ConvexNonsmoothI => "C-N-i",
            Self::ConvexNonsmoothII => "C-N-ii",
            Self::StronglyConvexNonsmooth => "SC-N",
            Self::ConvexSmooth => "C-S",
            Self::StronglyConvexSmooth => "SC-S",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.tag().eq_ignore_ascii_case(s))
    }
}

/// `χ(η̃)` with global surrogates: `λ_min` for every `λ_S`, `Λ_max` for
/// every `Λ_S` and `L_max` for every `L_S`. The expression is increasing in
/// `λ` and decreasing in `Λ` and `L`, so this never exceeds the true minimum.
pub fn compute_chi(lambda: f64, lambda_max: f64, l: f64, eta: f64, theta: f64) -> Result<f64> {
    check_unit_open("theta", theta)?;
    check_eta(eta)?;
    if !(lambda > 0.0) || lambda > l {
        return Err(FcdError::Assumption(format!(
            "need 0 < lambda <= L, got lambda = {lambda}, L = {l}"
        )));
    }
    if lambda_max < lambda {
        return Err(FcdError::Assumption(format!(
            "Lambda_max = {lambda_max} below lambda = {lambda}"
        )));
    }
    let gamma = (1.0 - eta) / (1.0 + 2.0 * lambda_max);
    let g2 = gamma * gamma;
    let num = theta * (1.0 - theta) * lambda.powi(3) * g2;
    let den = 2.0 * l * (eta * eta + lambda * g2 * (l - (1.0 - theta) * lambda));
    Ok(num / den)
}

/// `ϑ(η̃) = θλ²(1−η̃)²/(LΛ²)` with the same global surrogates.
pub fn compute_vartheta(lambda: f64, lambda_max: f64, l: f64, eta: f64, theta: f64) -> Result<f64> {
    if !(theta > 0.0 && theta < 0.5) {
        return Err(FcdError::InvalidParameter(format!(
            "theta must lie in (0, 1/2) for smooth bounds, got {theta}"
        )));
    }
    check_eta(eta)?;
    if !(lambda > 0.0) || lambda > l || lambda_max < lambda {
        return Err(FcdError::Assumption(format!(
            "need 0 < lambda <= min(L, Lambda), got lambda = {lambda}, L = {l}, Lambda = {lambda_max}"
        )));
    }
    Ok(theta * lambda * lambda * (1.0 - eta).powi(2) / (l * lambda_max * lambda_max))
}

pub fn compute_delta(mu_f: f64, mu_total: f64, lambda_max: f64) -> Result<f64> {
    if !(mu_f > 0.0) || mu_f > mu_total {
        return Err(FcdError::Assumption(format!(
            "need 0 < mu_f <= mu_F, got mu_f = {mu_f}, mu_F = {mu_total}"
        )));
    }
    if lambda_max < mu_f {
        return Err(FcdError::Assumption(format!(
            "need Lambda_max >= mu_f, got {lambda_max} < {mu_f}"
        )));
    }
    Ok(if mu_total + mu_f < 2.0 * lambda_max {
        (mu_f + mu_total) / (4.0 * lambda_max) * (1.0 + mu_f / mu_total)
    } else {
        1.0 - (lambda_max - mu_f) / mu_total
    })
}

fn check_unit_open(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(FcdError::InvalidParameter(format!("{name} must lie in (0, 1), got {v}")))
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if (0.0..1.0).contains(&eta) {
        Ok(())
    } else {
        Err(FcdError::InvalidParameter(format!("eta must lie in [0, 1), got {eta}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityConstants {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub l_max: f64,
    pub eta: f64,
    pub theta: f64,
    pub chi: f64,
    /// Only defined for `θ ∈ (0, ½)`.
    pub vartheta: Option<f64>,
    /// Only defined when both strong convexity moduli are known and positive.
    pub delta: Option<f64>,
    /// `(1−η̃)/(1+2Λ_max)`
    pub gamma_min: f64,
    /// `(1−θ)λ_min/(2L_max)`
    pub alpha_min: f64,
    pub mu_f: Option<f64>,
    pub mu_total: Option<f64>,
}

impl ComplexityConstants {
    pub fn new(
        lambda_min: f64,
        lambda_max: f64,
        l_max: f64,
        eta: f64,
        theta: f64,
        mu: Option<(f64, f64)>,
    ) -> Result<Self> {
        let chi = compute_chi(lambda_min, lambda_max, l_max, eta, theta)?;
        let vartheta = compute_vartheta(lambda_min, lambda_max, l_max, eta, theta).ok();
        let delta = match mu {
            Some((mf, mt)) if mf > 0.0 => Some(compute_delta(mf, mt, lambda_max)?),
            _ => None,
        };
        Ok(Self {
            lambda_min,
            lambda_max,
            l_max,
            eta,
            theta,
            chi,
            vartheta,
            delta,
            gamma_min: (1.0 - eta) / (1.0 + 2.0 * lambda_max),
            alpha_min: (1.0 - theta) * lambda_min / (2.0 * l_max),
            mu_f: mu.map(|m| m.0),
            mu_total: mu.map(|m| m.1),
        })
    }

    /// Global curvature surrogates for a problem, strategy and block size.
    pub fn for_problem(problem: &CompositeProblem, config: &FcdConfig) -> Result<Self> {
        let (lo, hi, l_max) = curvature_bounds(problem, &config.curvature, config.tau)?;
        let mu = match (problem.mu_f(), problem.mu_total()) {
            (Some(a), Some(b)) => Some((a, b)),
            _ => None,
        };
        Self::new(lo, hi, l_max, config.policy.eta, config.line_search.theta, mu)
    }
}

/// `(λ_min, Λ_max, L_max)` valid for every size-τ subset and every iterate.
pub fn curvature_bounds(problem: &CompositeProblem, strategy: &CurvatureStrategy, tau: usize) -> Result<(f64, f64, f64)> {
    let n = problem.dim();
    if tau == 0 || tau > n {
        return Err(FcdError::InvalidParameter(format!("tau must lie in [1, {n}]")));
    }
    let mut lips = problem.lipschitz_constants().to_vec();
    lips.sort_by(|a, b| a.partial_cmp(b).expect("finite constants"));
    let l_max: f64 = lips[n - tau..].iter().sum();
    let l_min_sum: f64 = lips[..tau].iter().sum();
    let (lo, hi) = match *strategy {
        CurvatureStrategy::Identity => (1.0, 1.0),
        CurvatureStrategy::ScaledIdentity { scale: ScaleRule::Constant { nu } } => (nu, nu),
        CurvatureStrategy::ScaledIdentity { scale: ScaleRule::SubsetLipschitz } => (l_min_sum, l_max),
        CurvatureStrategy::DiagonalHessian { ridge } => match problem.loss().kind() {
            LossKind::Quadratic => (lips[0] + ridge, lips[n - 1] + ridge),
            LossKind::Logistic if ridge > 0.0 => (ridge, lips[n - 1] + ridge),
            LossKind::Logistic => {
                return Err(FcdError::Assumption(
                    "logistic diagonal Hessian has no positive lower bound without a ridge".into(),
                ))
            }
        },
        CurvatureStrategy::PrincipalMinor { ridge } => (ridge, l_max + ridge),
        CurvatureStrategy::LimitedMemoryQn { .. } => {
            return Err(FcdError::Assumption(
                "no a-priori spectral bounds for limited-memory curvature".into(),
            ))
        }
    };
    Ok((lo, hi, l_max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub n: usize,
    pub tau: usize,
    pub epsilon: f64,
    pub rho: f64,
    /// `F(x₀) − F*`
    pub gap: f64,
    /// Upper bound on `R(x₀)`; required by the merely convex theorems.
    pub radius: Option<f64>,
}

/// Smallest integer `K ≥ 0` satisfying the theorem's inequality.
pub fn iteration_bound(theorem: Theorem, c: &ComplexityConstants, inp: &BoundInputs) -> Result<usize> {
    let BoundInputs { n, tau, epsilon: eps, rho, gap, radius } = *inp;
    if !(rho > 0.0 && rho < 1.0) {
        return Err(FcdError::InvalidParameter(format!("rho must lie in (0, 1), got {rho}")));
    }
    if !(eps > 0.0) || !(gap > 0.0) {
        return Err(FcdError::InvalidParameter("epsilon and the initial gap must be > 0".into()));
    }
    if tau == 0 || tau > n {
        return Err(FcdError::InvalidParameter(format!("tau must lie in [1, {n}]")));
    }
    let (n, tau) = (n as f64, tau as f64);
    let need_radius = || {
        radius.ok_or_else(|| FcdError::UnboundedLevelSet("theorem needs a level-set radius".into()))
    };
    let need = |v: Option<f64>, what: &str| {
        v.ok_or_else(|| FcdError::Assumption(format!("{what} is undefined for these constants")))
    };
    let raw = match theorem {
        Theorem::ConvexNonsmoothI => {
            let r = need_radius()?;
            if eps >= gap {
                return Err(FcdError::Assumption("C-N-i needs epsilon < F(x0) - F*".into()));
            }
            let m1 = (r * r).max(gap);
            let c1 = 2.0 * n / (tau * c.chi);
            c1 * m1 / eps * (1.0 + (1.0 / rho).ln()) + 2.0 - c1 * m1 / gap
        }
        Theorem::ConvexNonsmoothII => {
            let r = need_radius()?;
            if eps >= (r * r).min(gap) {
                return Err(FcdError::Assumption("C-N-ii needs epsilon < min(R^2, F(x0) - F*)".into()));
            }
            2.0 * n / (tau * c.chi) * (r * r / eps) * (gap / (eps * rho)).ln()
        }
        Theorem::StronglyConvexNonsmooth => {
            let delta = need(c.delta, "delta")?;
            n / (tau * c.chi * delta) * (gap / (eps * rho)).ln()
        }
        Theorem::ConvexSmooth => {
            let r = need_radius()?;
            let vt = need(c.vartheta, "vartheta")?;
            if eps >= (r * r).max(gap) {
                return Err(FcdError::Assumption("C-S needs epsilon < max(R^2, f(x0) - f*)".into()));
            }
            let c1 = 2.0 * n * r * r / (tau * vt);
            c1 / eps * (1.0 + (1.0 / rho).ln()) + 2.0 - c1 / gap
        }
        Theorem::StronglyConvexSmooth => {
            let vt = need(c.vartheta, "vartheta")?;
            let mu = need(c.mu_f.filter(|m| *m > 0.0), "mu_f")?;
            n / (tau * vt * mu) * (gap / (eps * rho)).ln()
        }
    };
    if !raw.is_finite() {
        return Err(FcdError::NonFinite("iteration bound"));
    }
    Ok(raw.max(0.0).ceil() as usize)
}

/// Per-step forcing admissible under each theorem: the smooth convex result
/// needs `η_k/(1−η_k)² ≤ η`; the others need `η_k ≤ η̃`.
pub fn admits_forcing(theorem: Theorem, eta_k: f64, eta: f64) -> bool {
    if !(0.0..1.0).contains(&eta_k) {
        return false;
    }
    match theorem {
        Theorem::ConvexSmooth => eta < 1.0 && eta_k / (1.0 - eta_k).powi(2) <= eta,
        _ => eta_k <= eta,
    }
}

/// Upper bound on `R(x₀)`, or on `R_w(x₀)` when `weights` is given.
///
/// Uses `sqrt(2(F(x₀)−F*)/μ_F)` when `F` is strongly convex; otherwise
/// bisects along signed coordinate axes and `samples` random rays from
/// `x*` and inflates the largest radius found by 1.2. The sampled value is
/// an estimate, not a certified bound, for level sets that are elongated
/// along directions no probe comes close to.
pub fn levelset_radius(
    problem: &CompositeProblem,
    x_star: &[f64],
    x0: &[f64],
    weights: Option<&[f64]>,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let f0 = problem.eval_objective(x0)?;
    let f_star = problem.eval_objective(x_star)?;
    let wscale = match weights {
        Some(w) => {
            if w.len() != problem.dim() || w.iter().any(|v| !(*v > 0.0)) {
                return Err(FcdError::InvalidParameter("weights must be positive, length N".into()));
            }
            w.iter().copied().fold(0.0, f64::max).sqrt()
        }
        None => 1.0,
    };
    let gap = (f0 - f_star).max(0.0);
    if gap == 0.0 {
        return Ok(0.0);
    }
    if let Some(mu) = problem.mu_total().filter(|m| *m > 0.0) {
        return Ok(wscale * (2.0 * gap / mu).sqrt());
    }
    let n = problem.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    let mut y = vec![0.0; n];
    // Signed coordinate axes first (elongated level sets are usually
    // axis-aligned in at least one coordinate), then random directions.
    let mut axes: Vec<usize> = (0..n).collect();
    if n > MAX_AXIS_PROBES {
        axes.shuffle(&mut rng);
        axes.truncate(MAX_AXIS_PROBES);
    }
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(2 * axes.len() + samples);
    for &i in &axes {
        for sign in [1.0, -1.0] {
            let mut d = vec![0.0; n];
            d[i] = sign;
            dirs.push(d);
        }
    }
    for _ in 0..samples {
        let mut d: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let dn = norm(&d);
        d.iter_mut().for_each(|v| *v /= dn);
        dirs.push(d);
    }
    for d in dirs {
        let mut inside = |r: f64| -> Result<bool> {
            for i in 0..n {
                y[i] = x_star[i] + r * d[i];
            }
            Ok(problem.eval_objective(&y)? <= f0)
        };
        let mut hi = 1.0;
        while inside(hi)? {
            hi *= 2.0;
            if hi > 1e12 {
                return Err(FcdError::UnboundedLevelSet(
                    "level set extends beyond 1e12 along a sampled ray".into(),
                ));
            }
        }
        let mut lo = 0.0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if inside(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        best = best.max(hi);
    }
    Ok(wscale * 1.2 * best)
}

/// Axis directions probed by [`levelset_radius`] before random rays.
pub const MAX_AXIS_PROBES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRequest {
    pub theorem: Theorem,
    pub epsilon: f64,
    pub rho: f64,
    /// Iterations per trial.
    pub iterations: usize,
    pub f_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub theorem: Theorem,
    pub epsilon: f64,
    pub rho: f64,
    pub iterations: usize,
    pub trials: usize,
    pub successes: usize,
    pub frequency: f64,
    /// `(1−ρ) − 2·sqrt(ρ(1−ρ)/trials)`
    pub threshold: f64,
    pub pass: bool,
}

/// Run `trials` independently seeded FCD runs of `request.iterations`
/// steps from `x₀ = 0` and count how often `F(x_K) − F* ≤ ε`.
pub fn validate_bound(
    problem: &CompositeProblem,
    config: &FcdConfig,
    request: &BoundRequest,
    trials: usize,
) -> Result<BoundReport> {
    if trials == 0 {
        return Err(FcdError::InvalidParameter("trials must be >= 1".into()));
    }
    let BoundRequest { theorem, epsilon, rho, iterations, f_star } = *request;
    let outcomes: Vec<Result<bool>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let x0 = vec![0.0; problem.dim()];
            if iterations == 0 {
                return Ok(problem.eval_objective(&x0)? - f_star <= epsilon);
            }
            let cfg = FcdConfig {
                seed: config.seed.wrapping_add(i as u64),
                max_iterations: iterations,
                record_every: usize::MAX,
                instrumented: false,
                stationarity_tol: 0.0,
                ..config.clone()
            };
            let trace = fcd_run_from(problem, &cfg, Some(x0))?;
            Ok(trace.final_objective - f_star <= epsilon)
        })
        .collect();
    let mut successes = 0;
    for o in outcomes {
        if o? {
            successes += 1;
        }
    }
    let frequency = successes as f64 / trials as f64;
    let threshold = (1.0 - rho) - 2.0 * (rho * (1.0 - rho) / trials as f64).sqrt();
    Ok(BoundReport {
        theorem,
        epsilon,
        rho,
        iterations,
        trials,
        successes,
        frequency,
        threshold,
        pass: frequency >= threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionEstimate {
    pub mean_ratio: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Same round-off test the driver uses to skip a sampled block.
fn negligible_residual(model: &SubproblemModel) -> bool {
    norm(&model.baseline_residual()) <= SUBSET_STATIONARY_TOL * norm_inf(model.x_subset()).max(1.0)
}

/// One FCD step from `iterate` on `subset`, returning `F` after the step.
fn trial_step(iterate: &Iterate<'_>, subset: &CoordinateSubset, config: &FcdConfig) -> Result<f64> {
    let mut it = iterate.clone();
    let model = build_model(&mut it, subset, &config.curvature, None)?;
    if negligible_residual(&model) {
        return Ok(it.objective());
    }
    let cert = subsolver::solve(&model, &config.policy)?;
    let step = it.prepare(subset, cert.t)?;
    let ls = backtrack(&it, &step, &config.line_search)?;
    Ok(it.objective() - ls.decrease.unwrap_or_else(|| it.objective_decrease(&step, ls.alpha)))
}

/// Sample mean of `(F(x_{k+1}) − F*)/(F(x_k) − F*)` over `per_state` fresh
/// subsets at each of the first `states` iterates of a seeded run.
pub fn expected_contraction(
    problem: &CompositeProblem,
    config: &FcdConfig,
    f_star: f64,
    states: usize,
    per_state: usize,
) -> Result<ContractionEstimate> {
    let n = problem.dim();
    let mut walker = TauNiceSampler::new(n, config.tau, config.seed)?;
    let mut probe = TauNiceSampler::new(n, config.tau, config.seed ^ 0x9e37_79b9_7f4a_7c15)?;
    let mut it = problem.iterate(vec![0.0; n])?;
    let mut ratios = Vec::with_capacity(states * per_state);
    for _ in 0..states {
        let gap = it.objective() - f_star;
        if !(gap > 0.0) {
            break;
        }
        for _ in 0..per_state {
            let s = probe.sample();
            ratios.push((trial_step(&it, &s, config)? - f_star) / gap);
        }
        // Advance the walk with a real step.
        let s = walker.sample();
        let model = build_model(&mut it, &s, &config.curvature, None)?;
        if !negligible_residual(&model) {
            let cert = subsolver::solve(&model, &config.policy)?;
            let step = it.prepare(&s, cert.t)?;
            let ls = backtrack(&it, &step, &config.line_search)?;
            it.commit(&step, ls.alpha);
        }
    }
    if ratios.is_empty() {
        return Err(FcdError::InvalidParameter("no states with a positive gap".into()));
    }
    let m = ratios.len() as f64;
    let mean = ratios.iter().sum::<f64>() / m;
    let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
    Ok(ContractionEstimate {
        mean_ratio: mean,
        std_error: (var / m).sqrt(),
        samples: ratios.len(),
    })
}
