//! Composite objective `F(x) = f(x) + Ψ(x)` and per-run iterate state.
//!
//! [`CompositeProblem`] holds immutable data (design matrix, targets,
//! regularizer) and can be shared across threads. [`Iterate`] owns the
//! current point together with the cached loss state that makes subset
//! operations cheap:
//!
//! * quadratic loss `f(x) = ½‖Ax − b‖²` caches the residual `r = Ax − b`;
//! * logistic loss `f(x) = Σ_j log(1 + exp(−b_j a_jᵀx))` caches the margins
//!   `m_j = b_j a_jᵀx` and `σ_j = e^{−m_j} / (1 + e^{−m_j})`.
//!
//! Both caches also carry `f(x)` and `Ψ(x)`, updated incrementally by
//! [`Iterate::commit`] and rebuilt from scratch on a fixed schedule.

use serde::{Deserialize, Serialize};

use crate::error::{FcdError, Result};
use crate::linalg::dot;
use crate::regularizer::SeparableRegularizer;
use crate::sparse::{RowAccumulator, SparseDesignMatrix};

/// Lipschitz constant assigned to all-zero design columns.
pub const LIPSCHITZ_FLOOR: f64 = 1e-12;

/// Sorted, duplicate-free coordinate index set `S ⊆ [N]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoordinateSubset {
    indices: Vec<usize>,
}

impl CoordinateSubset {
    /// `indices` must be strictly increasing, non-empty and below `n`.
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(FcdError::InvalidSubset("subset is empty".into()));
        }
        if indices.len() > n {
            return Err(FcdError::InvalidSubset(format!(
                "subset of size {} exceeds dimension {n}",
                indices.len()
            )));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FcdError::InvalidSubset(
                "indices must be strictly increasing".into(),
            ));
        }
        if let Some(&last) = indices.last() {
            if last >= n {
                return Err(FcdError::InvalidSubset(format!(
                    "index {last} out of range for dimension {n}"
                )));
            }
        }
        Ok(Self { indices })
    }

    /// Sorts the indices first; duplicates are still rejected.
    pub fn from_unsorted(mut indices: Vec<usize>, n: usize) -> Result<Self> {
        indices.sort_unstable();
        Self::new(indices, n)
    }

    pub fn full(n: usize) -> Self {
        Self {
            indices: (0..n).collect(),
        }
    }

    pub fn single(i: usize, n: usize) -> Result<Self> {
        Self::new(vec![i], n)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `x^S = U_Sᵀ x`.
    pub fn gather(&self, x: &[f64]) -> Vec<f64> {
        self.indices.iter().map(|&i| x[i]).collect()
    }

    /// `x += α U_S t`.
    pub fn scatter_add(&self, alpha: f64, t: &[f64], x: &mut [f64]) {
        for (&i, &ti) in self.indices.iter().zip(t) {
            x[i] += alpha * ti;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Quadratic,
    Logistic,
}

/// Smooth convex data-fit term.
#[derive(Debug, Clone, PartialEq)]
pub enum SmoothLoss {
    /// `½‖Ax − b‖²`
    Quadratic { a: SparseDesignMatrix, b: Vec<f64> },
    /// `Σ_j log(1 + exp(−b_j a_jᵀ x))`, labels `b_j ∈ {−1, +1}`
    Logistic { a: SparseDesignMatrix, b: Vec<f64> },
}

impl SmoothLoss {
    pub fn quadratic(a: SparseDesignMatrix, b: Vec<f64>) -> Result<Self> {
        if b.len() != a.rows() {
            return Err(FcdError::DimensionMismatch {
                expected: a.rows(),
                got: b.len(),
            });
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(FcdError::NonFinite("quadratic targets"));
        }
        Ok(Self::Quadratic { a, b })
    }

    pub fn logistic(a: SparseDesignMatrix, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != a.rows() {
            return Err(FcdError::DimensionMismatch {
                expected: a.rows(),
                got: labels.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&l| l != 1.0 && l != -1.0) {
            return Err(FcdError::InvalidParameter(format!(
                "logistic labels must be -1 or +1, found {bad}"
            )));
        }
        Ok(Self::Logistic { a, b: labels })
    }

    pub fn kind(&self) -> LossKind {
        match self {
            Self::Quadratic { .. } => LossKind::Quadratic,
            Self::Logistic { .. } => LossKind::Logistic,
        }
    }

    pub fn matrix(&self) -> &SparseDesignMatrix {
        match self {
            Self::Quadratic { a, .. } | Self::Logistic { a, .. } => a,
        }
    }

    pub fn targets(&self) -> &[f64] {
        match self {
            Self::Quadratic { b, .. } | Self::Logistic { b, .. } => b,
        }
    }
}

/// `log(1 + e^{−m})` without overflow.
pub(crate) fn softplus_neg(m: f64) -> f64 {
    if m > 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

/// `e^{−m} / (1 + e^{−m})` without overflow.
pub(crate) fn sigma_neg(m: f64) -> f64 {
    if m >= 0.0 {
        let e = (-m).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + m.exp())
    }
}

fn lipschitz_of(loss: &SmoothLoss) -> Vec<f64> {
    let a = loss.matrix();
    let scale = match loss.kind() {
        LossKind::Quadratic => 1.0,
        LossKind::Logistic => 0.25,
    };
    (0..a.cols())
        .map(|i| {
            let l = scale * a.column_sq_norm(i);
            if l > 0.0 {
                l
            } else {
                LIPSCHITZ_FLOOR
            }
        })
        .collect()
}

/// Immutable composite problem data.
#[derive(Debug, Clone)]
pub struct CompositeProblem {
    loss: SmoothLoss,
    regularizer: SeparableRegularizer,
    lipschitz: Vec<f64>,
    mu_f: Option<f64>,
    mu_total: Option<f64>,
}

impl CompositeProblem {
    pub fn new(loss: SmoothLoss, regularizer: SeparableRegularizer) -> Result<Self> {
        regularizer.validate()?;
        let lipschitz = lipschitz_of(&loss);
        Ok(Self {
            loss,
            regularizer,
            lipschitz,
            mu_f: None,
            mu_total: None,
        })
    }

    /// Attach known strong convexity moduli of `f` and `F`.
    pub fn with_strong_convexity(mut self, mu_f: f64, mu_total: f64) -> Result<Self> {
        if !(mu_f >= 0.0 && mu_total >= 0.0) {
            return Err(FcdError::InvalidParameter(
                "strong convexity moduli must be nonnegative".into(),
            ));
        }
        if mu_f > mu_total {
            return Err(FcdError::InvalidParameter(format!(
                "mu_f = {mu_f} exceeds mu_F = {mu_total}"
            )));
        }
        self.mu_f = Some(mu_f);
        self.mu_total = Some(mu_total);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.loss.matrix().cols()
    }

    pub fn samples(&self) -> usize {
        self.loss.matrix().rows()
    }

    pub fn loss(&self) -> &SmoothLoss {
        &self.loss
    }

    pub fn regularizer(&self) -> &SeparableRegularizer {
        &self.regularizer
    }

    pub fn mu_f(&self) -> Option<f64> {
        self.mu_f
    }

    pub fn mu_total(&self) -> Option<f64> {
        self.mu_total
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(FcdError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `f(x)` from scratch.
    pub fn eval_smooth(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let a = self.loss.matrix();
        let mut ax = vec![0.0; a.rows()];
        a.mul_vec(x, &mut ax);
        Ok(match &self.loss {
            SmoothLoss::Quadratic { b, .. } => {
                0.5 * ax.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>()
            }
            SmoothLoss::Logistic { b, .. } => ax
                .iter()
                .zip(b)
                .map(|(p, l)| softplus_neg(l * p))
                .sum(),
        })
    }

    /// `F(x) = f(x) + Ψ(x)` from scratch.
    pub fn eval_objective(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval_smooth(x)? + self.regularizer.value_sum(x))
    }

    /// Full gradient `∇f(x)` from scratch.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let a = self.loss.matrix();
        let mut ax = vec![0.0; a.rows()];
        a.mul_vec(x, &mut ax);
        let weights: Vec<f64> = match &self.loss {
            SmoothLoss::Quadratic { b, .. } => ax.iter().zip(b).map(|(p, q)| p - q).collect(),
            SmoothLoss::Logistic { b, .. } => ax
                .iter()
                .zip(b)
                .map(|(p, l)| -l * sigma_neg(l * p))
                .collect(),
        };
        let mut g = vec![0.0; a.cols()];
        a.mul_transpose_vec(&weights, &mut g);
        Ok(g)
    }

    /// Coordinate Lipschitz constant `L_i`: `‖A_{:,i}‖²` (quadratic) or
    /// `¼‖A_{:,i}‖²` (logistic), floored at [`LIPSCHITZ_FLOOR`].
    pub fn coordinate_lipschitz(&self, i: usize) -> f64 {
        self.lipschitz[i]
    }

    pub fn lipschitz_constants(&self) -> &[f64] {
        &self.lipschitz
    }

    /// Recompute all `L_i` from the design matrix (for timing-faithful
    /// baselines that must pay for this work).
    pub fn compute_lipschitz_constants(&self) -> Vec<f64> {
        lipschitz_of(&self.loss)
    }

    /// `L_S = Σ_{i∈S} L_i`.
    pub fn subset_lipschitz(&self, subset: &CoordinateSubset) -> f64 {
        subset.indices().iter().map(|&i| self.lipschitz[i]).sum()
    }

    /// Full-space stationarity residual `g(x;0) = ∇f + prox_{Ψ*}(x − ∇f)`.
    pub fn stationarity_residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        let g = self.gradient(x)?;
        Ok(x
            .iter()
            .zip(&g)
            .map(|(&xi, &gi)| gi + self.regularizer.conjugate_prox(xi - gi))
            .collect())
    }

    /// Start a run at `x0`.
    pub fn iterate(&self, x0: Vec<f64>) -> Result<Iterate<'_>> {
        Iterate::new(self, x0)
    }
}

#[derive(Debug, Clone)]
enum LossCache {
    Quadratic { residual: Vec<f64> },
    Logistic { margin: Vec<f64>, sigma: Vec<f64> },
}

/// A direction `t` on subset `S` with the row-space quantities needed by
/// the line search and the commit, computed once per iteration.
#[derive(Debug, Clone)]
pub struct PreparedStep {
    subset: CoordinateSubset,
    t: Vec<f64>,
    x_s: Vec<f64>,
    rows: Vec<usize>,
    /// `(A_S t)_j` for quadratic loss, `b_j (A_S t)_j` for logistic loss.
    dir: Vec<f64>,
    grad_dot_t: f64,
    dir_sq_norm: f64,
}

impl PreparedStep {
    pub fn subset(&self) -> &CoordinateSubset {
        &self.subset
    }

    pub fn direction(&self) -> &[f64] {
        &self.t
    }

    pub fn x_subset(&self) -> &[f64] {
        &self.x_s
    }

    /// `⟨∇_S f(x), t⟩`.
    pub fn grad_dot_t(&self) -> f64 {
        self.grad_dot_t
    }

    /// Number of samples touched by the direction.
    pub fn touched_rows(&self) -> usize {
        self.rows.len()
    }

    /// `Ψ_S(x^S) − Ψ_S(x^S + αt)`.
    pub fn psi_decrease(&self, reg: &SeparableRegularizer, alpha: f64) -> f64 {
        if reg.is_zero() {
            return 0.0;
        }
        self.x_s
            .iter()
            .zip(&self.t)
            .map(|(&xi, &ti)| -reg.value_change(xi, alpha * ti))
            .sum()
    }
}

/// Current point plus cached loss state for one run.
#[derive(Debug, Clone)]
pub struct Iterate<'p> {
    problem: &'p CompositeProblem,
    x: Vec<f64>,
    cache: LossCache,
    f_value: f64,
    psi_value: f64,
    commits_since_refresh: usize,
    refresh_interval: usize,
    refreshes: usize,
    acc: RowAccumulator,
    local_row: Vec<u32>,
}

impl<'p> Iterate<'p> {
    pub fn new(problem: &'p CompositeProblem, x0: Vec<f64>) -> Result<Self> {
        problem.check_dim(&x0)?;
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(FcdError::NonFinite("initial point"));
        }
        let m = problem.samples();
        let cache = match problem.loss {
            SmoothLoss::Quadratic { .. } => LossCache::Quadratic {
                residual: vec![0.0; m],
            },
            SmoothLoss::Logistic { .. } => LossCache::Logistic {
                margin: vec![0.0; m],
                sigma: vec![0.0; m],
            },
        };
        let mut it = Self {
            problem,
            x: x0,
            cache,
            f_value: 0.0,
            psi_value: 0.0,
            commits_since_refresh: 0,
            refresh_interval: usize::MAX,
            refreshes: 0,
            acc: RowAccumulator::new(m),
            local_row: vec![u32::MAX; m],
        };
        it.refresh();
        Ok(it)
    }

    pub fn problem(&self) -> &'p CompositeProblem {
        self.problem
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn into_x(self) -> Vec<f64> {
        self.x
    }

    /// Cached `F(x)`.
    pub fn objective(&self) -> f64 {
        self.f_value + self.psi_value
    }

    /// Cached `f(x)`.
    pub fn smooth_value(&self) -> f64 {
        self.f_value
    }

    /// Rebuild caches every `interval` commits.
    pub fn set_refresh_interval(&mut self, interval: usize) {
        self.refresh_interval = interval.max(1);
    }

    pub fn refresh_count(&self) -> usize {
        self.refreshes
    }

    /// Recompute all cached state from `x`.
    pub fn refresh(&mut self) {
        let a = self.problem.loss.matrix();
        let mut ax = vec![0.0; a.rows()];
        a.mul_vec(&self.x, &mut ax);
        match (&mut self.cache, &self.problem.loss) {
            (LossCache::Quadratic { residual }, SmoothLoss::Quadratic { b, .. }) => {
                for ((r, p), q) in residual.iter_mut().zip(&ax).zip(b) {
                    *r = p - q;
                }
                self.f_value = 0.5 * dot(residual, residual);
            }
            (LossCache::Logistic { margin, sigma }, SmoothLoss::Logistic { b, .. }) => {
                let mut f = 0.0;
                for j in 0..ax.len() {
                    margin[j] = b[j] * ax[j];
                    sigma[j] = sigma_neg(margin[j]);
                    f += softplus_neg(margin[j]);
                }
                self.f_value = f;
            }
            _ => unreachable!("cache variant always matches loss variant"),
        }
        self.psi_value = self.problem.regularizer.value_sum(&self.x);
        self.commits_since_refresh = 0;
        self.refreshes += 1;
    }

    /// Per-sample weight `w_j` such that `∇f = Aᵀw`.
    #[inline]
    fn gradient_weight(&self, j: usize) -> f64 {
        match (&self.cache, &self.problem.loss) {
            (LossCache::Quadratic { residual }, _) => residual[j],
            (LossCache::Logistic { sigma, .. }, SmoothLoss::Logistic { b, .. }) => -b[j] * sigma[j],
            _ => unreachable!(),
        }
    }

    /// `∇_S f(x)` via column access.
    pub fn partial_gradient(&self, subset: &CoordinateSubset) -> Vec<f64> {
        let a = self.problem.loss.matrix();
        subset
            .indices()
            .iter()
            .map(|&i| {
                let (idx, vals) = a.column(i);
                idx.iter()
                    .zip(vals)
                    .map(|(&j, v)| v * self.gradient_weight(j))
                    .sum()
            })
            .collect()
    }

    /// Full gradient `∇f(x) = Aᵀw` from the cached per-sample weights.
    pub fn full_gradient(&self) -> Vec<f64> {
        let a = self.problem.loss.matrix();
        let w: Vec<f64> = (0..a.rows()).map(|j| self.gradient_weight(j)).collect();
        let mut g = vec![0.0; a.cols()];
        a.mul_transpose_vec(&w, &mut g);
        g
    }

    /// `‖g(x;0)‖_∞` with `g(x;0) = ∇f + prox_{Ψ*}(x − ∇f)`.
    pub fn stationarity_inf_norm(&self) -> f64 {
        let reg = &self.problem.regularizer;
        self.full_gradient()
            .iter()
            .zip(&self.x)
            .fold(0.0, |m, (&g, &x)| f64::max(m, (g + reg.conjugate_prox(x - g)).abs()))
    }

    /// `diag(∇²_S f(x))`, computed analytically.
    pub fn hessian_diagonal(&self, subset: &CoordinateSubset) -> Vec<f64> {
        let a = self.problem.loss.matrix();
        match &self.cache {
            LossCache::Quadratic { .. } => subset
                .indices()
                .iter()
                .map(|&i| a.column_sq_norm(i))
                .collect(),
            LossCache::Logistic { sigma, .. } => subset
                .indices()
                .iter()
                .map(|&i| {
                    let (idx, vals) = a.column(i);
                    idx.iter()
                        .zip(vals)
                        .map(|(&j, v)| v * v * sigma[j] * (1.0 - sigma[j]))
                        .sum()
                })
                .collect(),
        }
    }

    /// Owned matrix-free snapshot of `∇²_S f(x)`.
    pub fn hessian_snapshot(&mut self, subset: &CoordinateSubset) -> SubsetHessian {
        let a = self.problem.loss.matrix();
        let mut rows: Vec<u32> = Vec::new();
        let mut cols = Vec::with_capacity(subset.len());
        for &i in subset.indices() {
            let (idx, vals) = a.column(i);
            let mut local = Vec::with_capacity(idx.len());
            for &j in idx {
                if self.local_row[j] == u32::MAX {
                    self.local_row[j] = rows.len() as u32;
                    rows.push(j as u32);
                }
                local.push(self.local_row[j]);
            }
            cols.push((local, vals.to_vec()));
        }
        let weights = match &self.cache {
            LossCache::Quadratic { .. } => vec![1.0; rows.len()],
            LossCache::Logistic { sigma, .. } => rows
                .iter()
                .map(|&j| sigma[j as usize] * (1.0 - sigma[j as usize]))
                .collect(),
        };
        for &j in &rows {
            self.local_row[j as usize] = u32::MAX;
        }
        SubsetHessian { cols, weights }
    }

    /// `∇²_S f(x) v` without forming the matrix.
    pub fn hessian_subset_product(&mut self, subset: &CoordinateSubset, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != subset.len() {
            return Err(FcdError::DimensionMismatch {
                expected: subset.len(),
                got: v.len(),
            });
        }
        let mut out = vec![0.0; v.len()];
        self.hessian_snapshot(subset).apply(v, &mut out);
        Ok(out)
    }

    /// Compute the row-space image of `t` once; reused across α trials.
    pub fn prepare(&mut self, subset: &CoordinateSubset, t: Vec<f64>) -> Result<PreparedStep> {
        if t.len() != subset.len() {
            return Err(FcdError::DimensionMismatch {
                expected: subset.len(),
                got: t.len(),
            });
        }
        let a = self.problem.loss.matrix();
        self.acc.accumulate_columns(a, subset.indices(), &t);
        let (rows, mut dir) = self.acc.drain_sorted();
        let (grad_dot_t, dir_sq_norm) = match (&self.cache, &self.problem.loss) {
            (LossCache::Quadratic { residual }, _) => {
                let g: f64 = rows.iter().zip(&dir).map(|(&j, d)| residual[j] * d).sum();
                (g, dot(&dir, &dir))
            }
            (LossCache::Logistic { sigma, .. }, SmoothLoss::Logistic { b, .. }) => {
                let (mut g, mut sq) = (0.0, 0.0);
                for (&j, d) in rows.iter().zip(dir.iter_mut()) {
                    *d *= b[j];
                    g -= sigma[j] * *d;
                    sq += *d * *d;
                }
                (g, sq)
            }
            _ => unreachable!(),
        };
        Ok(PreparedStep {
            x_s: subset.gather(&self.x),
            subset: subset.clone(),
            t,
            rows,
            dir,
            grad_dot_t,
            dir_sq_norm,
        })
    }

    /// `f(x) − f(x + α U_S t)` from cached state.
    pub fn smooth_decrease(&self, step: &PreparedStep, alpha: f64) -> f64 {
        match &self.cache {
            LossCache::Quadratic { .. } => {
                -alpha * step.grad_dot_t - 0.5 * alpha * alpha * step.dir_sq_norm
            }
            LossCache::Logistic { sigma, .. } => step
                .rows
                .iter()
                .zip(&step.dir)
                .map(|(&j, &q)| -(sigma[j] * (-alpha * q).exp_m1()).ln_1p())
                .sum(),
        }
    }

    /// `F(x) − F(x + α U_S t)` from cached state.
    pub fn objective_decrease(&self, step: &PreparedStep, alpha: f64) -> f64 {
        self.smooth_decrease(step, alpha) + step.psi_decrease(&self.problem.regularizer, alpha)
    }

    /// Convenience wrapper: prepare `t` and evaluate the decrease.
    pub fn objective_decrease_along(
        &mut self,
        subset: &CoordinateSubset,
        t: &[f64],
        alpha: f64,
    ) -> Result<f64> {
        let step = self.prepare(subset, t.to_vec())?;
        Ok(self.objective_decrease(&step, alpha))
    }

    /// `x ← x + α U_S t` with incremental cache update.
    /// Commit `x ← x + αU_S t` and return the exact decrease of `F`.
    pub fn commit(&mut self, step: &PreparedStep, alpha: f64) -> f64 {
        if alpha == 0.0 {
            return 0.0;
        }
        let df = self.smooth_decrease(step, alpha);
        let dpsi = step.psi_decrease(&self.problem.regularizer, alpha);
        step.subset.scatter_add(alpha, &step.t, &mut self.x);
        match &mut self.cache {
            LossCache::Quadratic { residual } => {
                for (&j, &d) in step.rows.iter().zip(&step.dir) {
                    residual[j] += alpha * d;
                }
            }
            LossCache::Logistic { margin, sigma } => {
                for (&j, &q) in step.rows.iter().zip(&step.dir) {
                    margin[j] += alpha * q;
                    sigma[j] = sigma_neg(margin[j]);
                }
            }
        }
        self.f_value -= df;
        self.psi_value -= dpsi;
        self.commits_since_refresh += 1;
        if self.commits_since_refresh >= self.refresh_interval {
            self.refresh();
        }
        df + dpsi
    }

    /// A constant `c` with `f(x + αU_S t) − f(x) − α⟨∇_S f, t⟩ ≤ α²c` for
    /// every `α`, when one is cheaper than the exact difference. Logistic
    /// rows have curvature at most ¼, so `c = ‖A_S t‖²/8`.
    pub fn curvature_excess(&self, step: &PreparedStep) -> Option<f64> {
        match self.cache {
            LossCache::Quadratic { .. } => None,
            LossCache::Logistic { .. } => Some(0.125 * step.dir_sq_norm),
        }
    }

    /// Cached residual `Ax − b` (quadratic loss only).
    pub fn residual(&self) -> Option<&[f64]> {
        match &self.cache {
            LossCache::Quadratic { residual } => Some(residual),
            LossCache::Logistic { .. } => None,
        }
    }
}

/// Matrix-free `A_Sᵀ D A_S` restricted to the rows touched by `S`.
#[derive(Debug, Clone)]
pub struct SubsetHessian {
    cols: Vec<(Vec<u32>, Vec<f64>)>,
    weights: Vec<f64>,
}

impl SubsetHessian {
    pub fn order(&self) -> usize {
        self.cols.len()
    }

    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        let mut u = vec![0.0; self.weights.len()];
        for ((idx, vals), &vi) in self.cols.iter().zip(v) {
            if vi == 0.0 {
                continue;
            }
            for (&j, &a) in idx.iter().zip(vals) {
                u[j as usize] += a * vi;
            }
        }
        for (uj, w) in u.iter_mut().zip(&self.weights) {
            *uj *= w;
        }
        for ((idx, vals), o) in self.cols.iter().zip(out.iter_mut()) {
            *o = idx.iter().zip(vals).map(|(&j, &a)| a * u[j as usize]).sum();
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.cols
            .iter()
            .map(|(idx, vals)| {
                idx.iter()
                    .zip(vals)
                    .map(|(&j, &a)| a * a * self.weights[j as usize])
                    .sum()
            })
            .collect()
    }

    /// Dense `τ × τ` form, row-major.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.order();
        let rows = self.weights.len();
        // Scatter each column to dense row space once, then take inner products.
        let mut dense_cols = vec![0.0; n * rows];
        for (c, (idx, vals)) in self.cols.iter().enumerate() {
            for (&j, &a) in idx.iter().zip(vals) {
                dense_cols[c * rows + j as usize] = a;
            }
        }
        let mut out = vec![0.0; n * n];
        for p in 0..n {
            let (idx, vals) = &self.cols[p];
            for q in p..n {
                let col_q = &dense_cols[q * rows..(q + 1) * rows];
                let v: f64 = idx
                    .iter()
                    .zip(vals)
                    .map(|(&j, &a)| a * self.weights[j as usize] * col_q[j as usize])
                    .sum();
                out[p * n + q] = v;
                out[q * n + p] = v;
            }
        }
        out
    }
}
