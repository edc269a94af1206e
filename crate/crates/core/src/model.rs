//! Subset quadratic models
//! `Q_S(x; t) = ⟨∇_S f, t⟩ + ½⟨H t, t⟩ + Ψ_S(x^S + t)` and curvature strategies.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{FcdError, Result};
use crate::linalg::{dot, norm, power_iteration, DenseMatrix};
use crate::problem::{CoordinateSubset, Iterate, SubsetHessian, LIPSCHITZ_FLOOR};
use crate::regularizer::SeparableRegularizer;

/// Power-iteration steps used to estimate `Λ_S` for non-diagonal operators.
/// Largest block for which the principal minor is formed as a dense matrix.
pub const DENSE_MINOR_MAX: usize = 512;
pub const POWER_STEPS: usize = 20;
/// Safety factor applied to the power-iteration estimate.
pub const POWER_SAFETY: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ScaleRule {
    /// Fixed `ν > 0`.
    Constant { nu: f64 },
    /// `ν = L_S = Σ_{i∈S} L_i`.
    SubsetLipschitz,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurvatureStrategy {
    Identity,
    ScaledIdentity { scale: ScaleRule },
    DiagonalHessian { ridge: f64 },
    PrincipalMinor { ridge: f64 },
    LimitedMemoryQn { memory: usize, ridge: f64 },
}

impl CurvatureStrategy {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FcdError::InvalidParameter(m));
        match *self {
            Self::Identity | Self::ScaledIdentity { scale: ScaleRule::SubsetLipschitz } => Ok(()),
            Self::ScaledIdentity { scale: ScaleRule::Constant { nu } } => {
                if nu > 0.0 && nu.is_finite() {
                    Ok(())
                } else {
                    bad(format!("identity scale must be > 0, got {nu}"))
                }
            }
            Self::DiagonalHessian { ridge } => {
                if ridge >= 0.0 && ridge.is_finite() {
                    Ok(())
                } else {
                    bad(format!("diagonal ridge must be >= 0, got {ridge}"))
                }
            }
            Self::PrincipalMinor { ridge } | Self::LimitedMemoryQn { ridge, .. } => {
                if let Self::LimitedMemoryQn { memory: 0, .. } = self {
                    return bad("L-BFGS memory must be >= 1".into());
                }
                if ridge > 0.0 && ridge.is_finite() {
                    Ok(())
                } else {
                    bad(format!("ridge must be > 0, got {ridge}"))
                }
            }
        }
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(
            self,
            Self::Identity | Self::ScaledIdentity { .. } | Self::DiagonalHessian { .. }
        )
    }
}

/// One accepted step `s` on subset `S_k` with the matching change `y` in
/// `∇_{S_k} f`. Stored sparsely on the indices of `S_k`.
#[derive(Debug, Clone)]
struct CurvaturePair {
    idx: Vec<usize>,
    s: Vec<f64>,
    y: Vec<f64>,
}

/// Rolling L-BFGS memory, owned by a single run.
#[derive(Debug, Clone)]
pub struct LbfgsHistory {
    memory: usize,
    pairs: VecDeque<CurvaturePair>,
}

impl LbfgsHistory {
    pub fn new(memory: usize) -> Self {
        Self {
            memory: memory.max(1),
            pairs: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Store a pair unless it fails the curvature condition.
    pub fn push(&mut self, subset: &CoordinateSubset, s: Vec<f64>, y: Vec<f64>) {
        if !curvature_ok(&s, &y) {
            return;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back(CurvaturePair {
            idx: subset.indices().to_vec(),
            s,
            y,
        });
    }

    /// Pairs restricted to `S`, oldest first, dropping those that lose
    /// positive curvature after restriction.
    fn restricted(&self, subset: &CoordinateSubset) -> Vec<(Vec<f64>, Vec<f64>)> {
        let target = subset.indices();
        let mut out = Vec::new();
        for p in &self.pairs {
            let mut s = vec![0.0; target.len()];
            let mut y = vec![0.0; target.len()];
            let (mut a, mut b) = (0, 0);
            let mut any = false;
            while a < p.idx.len() && b < target.len() {
                match p.idx[a].cmp(&target[b]) {
                    std::cmp::Ordering::Less => a += 1,
                    std::cmp::Ordering::Greater => b += 1,
                    std::cmp::Ordering::Equal => {
                        s[b] = p.s[a];
                        y[b] = p.y[a];
                        any = true;
                        a += 1;
                        b += 1;
                    }
                }
            }
            if any && curvature_ok(&s, &y) {
                out.push((s, y));
            }
        }
        out
    }
}

fn curvature_ok(s: &[f64], y: &[f64]) -> bool {
    let sy = dot(s, y);
    sy.is_finite() && sy > 1e-10 * norm(s) * norm(y)
}

/// Compact BFGS matrix `γI + Σ_k (y_k y_kᵀ/⟨y_k,s_k⟩ − b_k b_kᵀ/⟨s_k,b_k⟩)`.
#[derive(Debug, Clone)]
struct LowRankBfgs {
    gamma: f64,
    terms: Vec<(Vec<f64>, f64, Vec<f64>, f64)>,
}

impl LowRankBfgs {
    fn build(gamma: f64, pairs: Vec<(Vec<f64>, Vec<f64>)>) -> Self {
        let mut op = Self {
            gamma,
            terms: Vec::with_capacity(pairs.len()),
        };
        for (s, y) in pairs {
            let mut b = vec![0.0; s.len()];
            op.apply(&s, &mut b);
            let sb = dot(&s, &b);
            let ys = dot(&y, &s);
            if sb > 0.0 && ys > 0.0 {
                op.terms.push((b, sb, y, ys));
            }
        }
        op
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (o, vi) in out.iter_mut().zip(v) {
            *o = self.gamma * vi;
        }
        for (b, sb, y, ys) in &self.terms {
            let cb = dot(b, v) / sb;
            let cy = dot(y, v) / ys;
            for ((o, bi), yi) in out.iter_mut().zip(b).zip(y) {
                *o += cy * yi - cb * bi;
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Operator {
    Diagonal(Vec<f64>),
    Minor { hessian: SubsetHessian, ridge: f64 },
    Bfgs { op: LowRankBfgs, ridge: f64 },
    Dense(DenseMatrix),
    /// Principal minor already formed densely, ridge included.
    DenseMinor { h: DenseMatrix, ridge: f64 },
}

/// Immutable snapshot of the subset model at the current iterate.
#[derive(Debug, Clone)]
pub struct SubproblemModel {
    subset: CoordinateSubset,
    grad: Vec<f64>,
    x_s: Vec<f64>,
    operator: Operator,
    lambda_min: f64,
    lambda_max: f64,
    regularizer: SeparableRegularizer,
}

/// Assemble `Q_S` at the iterate. `history` is consulted only by the
/// limited-memory strategy; `None` there means `B_0 = γI` alone.
pub fn build_model(
    iterate: &mut Iterate<'_>,
    subset: &CoordinateSubset,
    strategy: &CurvatureStrategy,
    history: Option<&LbfgsHistory>,
) -> Result<SubproblemModel> {
    let grad = iterate.partial_gradient(subset);
    build_model_with_gradient(iterate, subset, grad, strategy, history)
}

/// As [`build_model`], reusing an already computed `∇_S f(x)`.
pub fn build_model_with_gradient(
    iterate: &mut Iterate<'_>,
    subset: &CoordinateSubset,
    grad: Vec<f64>,
    strategy: &CurvatureStrategy,
    history: Option<&LbfgsHistory>,
) -> Result<SubproblemModel> {
    strategy.validate()?;
    let problem = iterate.problem();
    if grad.len() != subset.len() {
        return Err(FcdError::DimensionMismatch {
            expected: subset.len(),
            got: grad.len(),
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(FcdError::NonFinite("subset gradient"));
    }
    let tau = subset.len();
    let operator = match *strategy {
        CurvatureStrategy::Identity => Operator::Diagonal(vec![1.0; tau]),
        CurvatureStrategy::ScaledIdentity { scale } => {
            let nu = match scale {
                ScaleRule::Constant { nu } => nu,
                ScaleRule::SubsetLipschitz => problem.subset_lipschitz(subset),
            };
            Operator::Diagonal(vec![nu; tau])
        }
        CurvatureStrategy::DiagonalHessian { ridge } => Operator::Diagonal(
            iterate
                .hessian_diagonal(subset)
                .into_iter()
                .map(|d| (d + ridge).max(LIPSCHITZ_FLOOR))
                .collect(),
        ),
        CurvatureStrategy::PrincipalMinor { ridge } => {
            let hessian = iterate.hessian_snapshot(subset);
            if tau <= DENSE_MINOR_MAX {
                let mut h = DenseMatrix::from_row_major(tau, hessian.to_dense());
                for i in 0..tau {
                    h.set(i, i, h.get(i, i) + ridge);
                }
                Operator::DenseMinor { h, ridge }
            } else {
                Operator::Minor { hessian, ridge }
            }
        }
        CurvatureStrategy::LimitedMemoryQn { ridge, .. } => {
            let pairs = history.map(|h| h.restricted(subset)).unwrap_or_default();
            let gamma = match pairs.last() {
                Some((s, y)) => dot(y, y) / dot(s, y),
                None => problem.subset_lipschitz(subset) / tau as f64,
            };
            Operator::Bfgs {
                op: LowRankBfgs::build(gamma, pairs),
                ridge,
            }
        }
    };
    let (lambda_min, lambda_max) = match &operator {
        Operator::Diagonal(d) => (
            d.iter().copied().fold(f64::INFINITY, f64::min),
            d.iter().copied().fold(0.0, f64::max),
        ),
        Operator::Minor { ridge, .. } | Operator::Bfgs { ridge, .. } | Operator::DenseMinor { ridge, .. } => {
            let est = power_iteration(tau, POWER_STEPS, |v, out| apply_op(&operator, v, out));
            (*ridge, (POWER_SAFETY * est).max(*ridge))
        }
        Operator::Dense(_) => unreachable!("dense operators come from from_dense"),
    };
    Ok(SubproblemModel {
        x_s: subset.gather(iterate.x()),
        subset: subset.clone(),
        grad,
        operator,
        lambda_min,
        lambda_max,
        regularizer: *problem.regularizer(),
    })
}

fn apply_op(op: &Operator, v: &[f64], out: &mut [f64]) {
    match op {
        Operator::Diagonal(d) => {
            for ((o, di), vi) in out.iter_mut().zip(d).zip(v) {
                *o = di * vi;
            }
        }
        Operator::Minor { hessian, ridge } => {
            hessian.apply(v, out);
            for (o, vi) in out.iter_mut().zip(v) {
                *o += ridge * vi;
            }
        }
        Operator::Bfgs { op, ridge } => {
            op.apply(v, out);
            for (o, vi) in out.iter_mut().zip(v) {
                *o += ridge * vi;
            }
        }
        Operator::Dense(h) | Operator::DenseMinor { h, .. } => h.mul_vec(v, out),
    }
}

impl SubproblemModel {
    /// Build a model directly from its parts. `h` must be symmetric
    /// positive definite; bounds are taken from its eigenvalues via power
    /// iteration with ridge `lambda_min`.
    pub fn from_dense(
        grad: Vec<f64>,
        x_s: Vec<f64>,
        h: &DenseMatrix,
        lambda_min: f64,
        regularizer: SeparableRegularizer,
    ) -> Result<Self> {
        let tau = grad.len();
        if x_s.len() != tau || h.order() != tau {
            return Err(FcdError::DimensionMismatch {
                expected: tau,
                got: x_s.len().min(h.order()),
            });
        }
        let is_diag = (0..tau).all(|i| (0..tau).all(|j| i == j || h.get(i, j) == 0.0));
        let operator = if is_diag {
            Operator::Diagonal(h.diagonal())
        } else {
            Operator::Dense(h.clone())
        };
        let (lo, hi) = match &operator {
            Operator::Diagonal(d) => (
                d.iter().copied().fold(f64::INFINITY, f64::min),
                d.iter().copied().fold(0.0, f64::max),
            ),
            _ => (
                lambda_min,
                POWER_SAFETY * power_iteration(tau, POWER_STEPS, |v, out| h.mul_vec(v, out)),
            ),
        };
        Ok(Self {
            subset: CoordinateSubset::full(tau),
            grad,
            x_s,
            operator,
            lambda_min: lo,
            lambda_max: hi,
            regularizer,
        })
    }

    pub fn subset(&self) -> &CoordinateSubset {
        &self.subset
    }

    pub fn tau(&self) -> usize {
        self.grad.len()
    }

    pub fn gradient(&self) -> &[f64] {
        &self.grad
    }

    pub fn x_subset(&self) -> &[f64] {
        &self.x_s
    }

    pub fn regularizer(&self) -> &SeparableRegularizer {
        &self.regularizer
    }

    /// `λ_S`, a lower bound on the spectrum of `H`.
    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    /// `Λ_S`, an upper bound on the spectrum of `H`.
    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        apply_op(&self.operator, v, out);
    }

    pub fn apply_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.apply(v, &mut out);
        out
    }

    /// Diagonal of `H` when `H` itself is diagonal.
    pub fn diagonal(&self) -> Option<&[f64]> {
        match &self.operator {
            Operator::Diagonal(d) => Some(d),
            _ => None,
        }
    }

    /// Diagonal entries of `H` for any operator.
    pub fn diagonal_entries(&self) -> Vec<f64> {
        match &self.operator {
            Operator::Diagonal(d) => d.clone(),
            Operator::Minor { hessian, ridge } => {
                hessian.diagonal().into_iter().map(|d| d + ridge).collect()
            }
            Operator::Dense(h) | Operator::DenseMinor { h, .. } => h.diagonal(),
            Operator::Bfgs { .. } => {
                let tau = self.tau();
                let mut e = vec![0.0; tau];
                let mut out = vec![0.0; tau];
                (0..tau)
                    .map(|i| {
                        e[i] = 1.0;
                        self.apply(&e, &mut out);
                        e[i] = 0.0;
                        out[i]
                    })
                    .collect()
            }
        }
    }

    /// Dense `τ × τ` form of `H`.
    pub fn to_dense(&self) -> DenseMatrix {
        let tau = self.tau();
        match &self.operator {
            Operator::Diagonal(d) => {
                let mut m = DenseMatrix::zeros(tau);
                for (i, &di) in d.iter().enumerate() {
                    m.set(i, i, di);
                }
                m
            }
            Operator::Minor { hessian, ridge } => {
                let mut m = DenseMatrix::from_row_major(tau, hessian.to_dense());
                for i in 0..tau {
                    m.set(i, i, m.get(i, i) + ridge);
                }
                m
            }
            Operator::Dense(h) | Operator::DenseMinor { h, .. } => h.clone(),
            Operator::Bfgs { .. } => {
                let mut m = DenseMatrix::zeros(tau);
                let mut e = vec![0.0; tau];
                let mut col = vec![0.0; tau];
                for j in 0..tau {
                    e[j] = 1.0;
                    self.apply(&e, &mut col);
                    e[j] = 0.0;
                    for i in 0..tau {
                        m.set(i, j, col[i]);
                    }
                }
                m
            }
        }
    }

    /// `Ψ_S(x^S + t) − Ψ_S(x^S)`.
    pub fn psi_change(&self, t: &[f64]) -> f64 {
        if self.regularizer.is_zero() {
            return 0.0;
        }
        self.x_s
            .iter()
            .zip(t)
            .map(|(&x, &ti)| self.regularizer.value_change(x, ti))
            .sum()
    }

    /// `Q_S(x; t) − Q_S(x; 0)`.
    pub fn value_delta(&self, t: &[f64]) -> f64 {
        let ht = self.apply_vec(t);
        dot(&self.grad, t) + 0.5 * dot(&ht, t) + self.psi_change(t)
    }

    /// `g_S(x; t) = ∇_S f + Ht + prox_{Ψ*}(x^S + t − ∇_S f − Ht)`.
    pub fn stationarity_residual(&self, t: &[f64]) -> Vec<f64> {
        let ht = self.apply_vec(t);
        self.residual_from_ht(t, &ht)
    }

    pub(crate) fn residual_from_ht(&self, t: &[f64], ht: &[f64]) -> Vec<f64> {
        (0..self.tau())
            .map(|i| {
                let lin = self.grad[i] + ht[i];
                lin + self.regularizer.conjugate_prox(self.x_s[i] + t[i] - lin)
            })
            .collect()
    }

    /// `g_S(x; 0)`.
    pub fn baseline_residual(&self) -> Vec<f64> {
        (0..self.tau())
            .map(|i| self.grad[i] + self.regularizer.conjugate_prox(self.x_s[i] - self.grad[i]))
            .collect()
    }
}

/// `Q_S(x;t) − Q_S(x;0)` as a free function.
pub fn model_value_delta(model: &SubproblemModel, t: &[f64]) -> f64 {
    model.value_delta(t)
}

/// `g_S(x;t)` as a free function.
pub fn stationarity_residual(model: &SubproblemModel, t: &[f64]) -> Vec<f64> {
    model.stationarity_residual(t)
}
