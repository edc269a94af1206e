//! Inexact minimization of the subset model and the two acceptance tests
//! a direction must pass: strict model decrease, and
//! `dist(g_S(x;t), ∂Q_S(x;t))² + ‖g_S(x;t)‖² ≤ (η‖g_S(x;0)‖)²`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FcdError, Result};
use crate::linalg::{dot, norm, DenseMatrix};
use crate::model::SubproblemModel;

/// Relative round-off allowance added to the residual test, so that an
/// exact minimizer passes at `η = 0` in floating point.
pub const CERTIFICATE_ROUNDOFF: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerSolver {
    ClosedFormDiagonal,
    ConjugateGradientSmooth,
    ProximalCoordinate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InexactnessPolicy {
    pub eta: f64,
    /// Sweep cap for the proximal inner solver; `None` means `50·τ`.
    pub max_inner_iterations: Option<usize>,
    pub solver: InnerSolver,
    /// Fail hard when certificates cannot be met instead of retrying with
    /// an exact solve.
    pub strict: bool,
}

impl Default for InexactnessPolicy {
    fn default() -> Self {
        Self {
            eta: 0.9,
            max_inner_iterations: None,
            solver: InnerSolver::ProximalCoordinate,
            strict: false,
        }
    }
}

impl InexactnessPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.eta) {
            return Err(FcdError::InvalidParameter(format!(
                "eta must lie in [0, 1), got {}",
                self.eta
            )));
        }
        if self.max_inner_iterations == Some(0) {
            return Err(FcdError::InvalidParameter("inner iteration cap must be >= 1".into()));
        }
        Ok(())
    }

    fn sweep_cap(&self, tau: usize) -> usize {
        self.max_inner_iterations.unwrap_or(50 * tau).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionCertificate {
    pub t: Vec<f64>,
    pub model_delta: f64,
    pub residual_norm: f64,
    pub baseline_norm: f64,
    pub projection_distance: f64,
    pub inner_iterations: usize,
    pub passed: bool,
    /// Set when the direction came from the exact-solve retry.
    pub fallback: bool,
}

fn certify(model: &SubproblemModel, t: Vec<f64>, ht: &[f64], eta: f64, baseline: f64, iters: usize) -> DirectionCertificate {
    let reg = model.regularizer();
    let g = model.gradient();
    let x = model.x_subset();
    let ht_t = dot(ht, &t);
    let model_delta = dot(g, &t) + 0.5 * ht_t + model.psi_change(&t);

    let mut res_sq = 0.0;
    let mut dist_sq = 0.0;
    let mut scale_sq = 0.0;
    for i in 0..t.len() {
        let lin = g[i] + ht[i];
        let point = x[i] + t[i];
        let p = reg.conjugate_prox(point - lin);
        let r = lin + p;
        res_sq += r * r;
        let d = p - reg.subdifferential_project(point, p);
        dist_sq += d * d;
        let s = g[i].abs() + ht[i].abs() + x[i].abs() + t[i].abs();
        scale_sq += s * s;
    }
    let slack = CERTIFICATE_ROUNDOFF * scale_sq.sqrt();
    let bound = eta * baseline + slack;
    let passed = model_delta < 0.0 && dist_sq + res_sq <= bound * bound;
    DirectionCertificate {
        t,
        model_delta,
        residual_norm: res_sq.sqrt(),
        baseline_norm: baseline,
        projection_distance: dist_sq.sqrt(),
        inner_iterations: iters,
        passed,
        fallback: false,
    }
}

/// Evaluate both acceptance tests for `t`.
pub fn check_certificates(
    model: &SubproblemModel,
    t: &[f64],
    policy: &InexactnessPolicy,
) -> (bool, DirectionCertificate) {
    let ht = model.apply_vec(t);
    let baseline = norm(&model.baseline_residual());
    let cert = certify(model, t.to_vec(), &ht, policy.eta, baseline, 0);
    (cert.passed, cert)
}

/// Exact coordinatewise minimizer for diagonal `H`.
pub fn solve_closed_form_diagonal(model: &SubproblemModel) -> Result<DirectionCertificate> {
    let d = model.diagonal().ok_or(FcdError::NotDiagonal)?;
    let reg = model.regularizer();
    let t: Vec<f64> = (0..model.tau())
        .map(|i| {
            let x = model.x_subset()[i];
            reg.prox_unchecked(x - model.gradient()[i] / d[i], d[i]) - x
        })
        .collect();
    let ht: Vec<f64> = t.iter().zip(d).map(|(a, b)| a * b).collect();
    let baseline = norm(&model.baseline_residual());
    Ok(certify(model, t, &ht, 0.0, baseline, 1))
}

/// Conjugate gradients on `H t = −∇_S f` from `t = 0`, stopping at the
/// first iterate with `‖∇_S f + Ht‖ ≤ η‖∇_S f‖` or after `τ` steps.
pub fn solve_cg_smooth(model: &SubproblemModel, policy: &InexactnessPolicy) -> Result<DirectionCertificate> {
    solve_cg_smooth_observed(model, policy, |_, _| {})
}

/// As [`solve_cg_smooth`], calling `observe(t, Ht)` at every CG iterate.
pub fn solve_cg_smooth_observed<F>(
    model: &SubproblemModel,
    policy: &InexactnessPolicy,
    mut observe: F,
) -> Result<DirectionCertificate>
where
    F: FnMut(&[f64], &[f64]),
{
    if !model.regularizer().is_zero() {
        return Err(FcdError::NonSmoothRegularizer);
    }
    let g = model.gradient();
    let gnorm = norm(g);
    if gnorm == 0.0 {
        return Err(FcdError::ZeroGradient);
    }
    let tau = model.tau();
    let mut t = vec![0.0; tau];
    let mut ht = vec![0.0; tau];
    let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut p = r.clone();
    let mut hp = vec![0.0; tau];
    let mut rr = dot(&r, &r);
    let mut iters = 0;
    while iters < tau {
        model.apply(&p, &mut hp);
        let php = dot(&p, &hp);
        if !(php > 0.0) {
            break;
        }
        let a = rr / php;
        for i in 0..tau {
            t[i] += a * p[i];
            ht[i] += a * hp[i];
            r[i] -= a * hp[i];
        }
        iters += 1;
        let (ts, hts) = galerkin_scaled(g, &t, &ht);
        observe(&ts, &hts);
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= policy.eta * gnorm {
            break;
        }
        let beta = rr_new / rr;
        for i in 0..tau {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    let (t, ht) = galerkin_scaled(g, &t, &ht);
    Ok(certify(model, t, &ht, policy.eta, gnorm, iters))
}

/// Rescale a CG iterate by `β = −⟨g,t⟩/⟨Ht,t⟩`. In exact arithmetic `β = 1`;
/// in floating point this restores `⟨Ht,t⟩ = −⟨g,t⟩` after conjugacy loss.
fn galerkin_scaled(g: &[f64], t: &[f64], ht: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let tht = dot(ht, t);
    let beta = if tht > 0.0 { -dot(g, t) / tht } else { 1.0 };
    (
        t.iter().map(|v| beta * v).collect(),
        ht.iter().map(|v| beta * v).collect(),
    )
}

/// Proximal coordinate descent on the model, checking certificates after
/// every sweep.
pub fn solve_proximal_inner(model: &SubproblemModel, policy: &InexactnessPolicy) -> Result<DirectionCertificate> {
    let baseline = norm(&model.baseline_residual());
    if baseline == 0.0 {
        return Err(FcdError::ZeroGradient);
    }
    let cap = policy.sweep_cap(model.tau());
    let (cert, done) = prox_sweeps(model, policy.eta, baseline, cap);
    if done {
        Ok(cert)
    } else {
        Err(FcdError::CertificateNotMet { iterations: cert.inner_iterations })
    }
}

fn prox_sweeps(model: &SubproblemModel, eta: f64, baseline: f64, cap: usize) -> (DirectionCertificate, bool) {
    let h = model.to_dense();
    let tau = model.tau();
    let reg = model.regularizer();
    let g = model.gradient();
    let x = model.x_subset();
    let mut t = vec![0.0; tau];
    let mut ht = vec![0.0; tau];
    let mut last = None;
    for sweep in 1..=cap {
        for i in 0..tau {
            let hii = h.get(i, i);
            let u = x[i] + t[i];
            let u_new = reg.prox_unchecked(u - (g[i] + ht[i]) / hii, hii);
            let delta = u_new - u;
            if delta != 0.0 {
                t[i] += delta;
                for (k, w) in ht.iter_mut().enumerate() {
                    *w += delta * h.get(k, i);
                }
            }
        }
        let cert = certify(model, t.clone(), &ht, eta, baseline, sweep);
        if cert.passed {
            return (cert, true);
        }
        last = Some(cert);
    }
    (last.expect("at least one sweep"), false)
}

/// High-accuracy solve used as the lenient-mode retry.
pub fn solve_exact(model: &SubproblemModel) -> Result<DirectionCertificate> {
    let baseline = norm(&model.baseline_residual());
    let mut cert = if model.diagonal().is_some() {
        solve_closed_form_diagonal(model)?
    } else if model.regularizer().is_zero() {
        let h = model.to_dense();
        let rhs: Vec<f64> = model.gradient().iter().map(|v| -v).collect();
        let t = dense_solve(&h, &rhs)?;
        let ht = model.apply_vec(&t);
        certify(model, t, &ht, 0.0, baseline, 1)
    } else {
        prox_sweeps(model, 0.0, baseline, 1000 * model.tau()).0
    };
    cert.fallback = true;
    Ok(cert)
}

/// Dispatch on the policy's inner solver. In lenient mode an uncertified
/// result is replaced by [`solve_exact`]; strict mode returns the error.
pub fn solve(model: &SubproblemModel, policy: &InexactnessPolicy) -> Result<DirectionCertificate> {
    let first = match policy.solver {
        InnerSolver::ClosedFormDiagonal => solve_closed_form_diagonal(model),
        InnerSolver::ConjugateGradientSmooth => solve_cg_smooth(model, policy),
        InnerSolver::ProximalCoordinate => solve_proximal_inner(model, policy),
    };
    let uncertified = match first {
        Ok(c) if c.passed => return Ok(c),
        Ok(c) => c.inner_iterations,
        Err(FcdError::CertificateNotMet { iterations }) => iterations,
        Err(e) => return Err(e),
    };
    if policy.strict {
        return Err(FcdError::CertificateNotMet { iterations: uncertified });
    }
    let cert = solve_exact(model)?;
    if cert.model_delta < 0.0 {
        Ok(cert)
    } else {
        Err(FcdError::CertificateNotMet { iterations: uncertified })
    }
}

/// Solve the symmetric positive definite system `H t = b`.
pub fn dense_solve(h: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = h.order();
    let m = DMatrix::from_fn(n, n, |i, j| h.get(i, j));
    let rhs = DVector::from_column_slice(b);
    let sol = match m.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| FcdError::Assumption("curvature matrix is singular".into()))?,
    };
    Ok(sol.iter().copied().collect())
}
