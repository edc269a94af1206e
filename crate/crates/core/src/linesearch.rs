//! Backtracking along a certified direction with step sizes `1, ½, ¼, …`.
//!
//! A step `α` is accepted when
//! `F(x) − F(x + αU_S t) ≥ θ (ℓ(x;0) − ℓ(x;αU_S t))`, where `ℓ` is the
//! linearization of `f` plus `Ψ`. Both sides only touch the subset.

use serde::{Deserialize, Serialize};

use crate::error::{FcdError, Result};
use crate::problem::{Iterate, PreparedStep};
use crate::regularizer::SeparableRegularizer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearchConfig {
    pub theta: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self {
            theta: 1e-3,
            max_backtracks: 200,
        }
    }
}

impl LineSearchConfig {
    pub const SHRINK: f64 = 0.5;

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(FcdError::InvalidParameter(format!(
                "theta must lie in (0, 1), got {}",
                self.theta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearchOutcome {
    pub alpha: f64,
    /// Number of halvings before acceptance.
    pub backtracks: usize,
    /// `F(x) − F(x + αU_S t)` at the accepted step, when the acceptance
    /// test had to evaluate it. `None` means a curvature bound already
    /// certified the step.
    pub decrease: Option<f64>,
    /// `ℓ(x;0) − ℓ(x;αU_S t)` at the accepted step.
    pub loss_decrease: f64,
}

/// `ℓ(x;0) − ℓ(x;αU_S t) = −α⟨∇_S f, t⟩ + Ψ_S(x^S) − Ψ_S(x^S + αt)`.
pub fn loss_delta(step: &PreparedStep, reg: &SeparableRegularizer, alpha: f64) -> f64 {
    -alpha * step.grad_dot_t() + step.psi_decrease(reg, alpha)
}

/// Smallest `s ≥ 0` with `2^{−s}` at or below the guaranteed step
/// `(1−θ)λ_S/(2L_S)`, plus one: the worst-case trial count.
pub fn worst_case_trials(theta: f64, lambda_s: f64, l_s: f64) -> usize {
    let floor = (1.0 - theta) * lambda_s / (2.0 * l_s);
    if floor >= 1.0 {
        1
    } else {
        (1.0 / floor).log2().ceil() as usize + 1
    }
}

pub fn backtrack(
    iterate: &Iterate<'_>,
    step: &PreparedStep,
    config: &LineSearchConfig,
) -> Result<LineSearchOutcome> {
    let reg = iterate.problem().regularizer();
    let excess = iterate.curvature_excess(step);
    let mut alpha = 1.0;
    for backtracks in 0..=config.max_backtracks {
        let model = loss_delta(step, reg, alpha);
        // The bound under-estimates the true decrease, so accepting on it
        // never changes which α is chosen.
        let certified = excess.is_some_and(|c| model - alpha * alpha * c >= config.theta * model);
        let decrease = (!certified).then(|| iterate.objective_decrease(step, alpha));
        if decrease.is_none_or(|d| d >= config.theta * model) {
            return Ok(LineSearchOutcome {
                alpha,
                backtracks,
                decrease,
                loss_decrease: model,
            });
        }
        alpha *= LineSearchConfig::SHRINK;
    }
    Err(FcdError::LineSearchExhausted {
        trials: config.max_backtracks + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use crate::problem::{CompositeProblem, CoordinateSubset, SmoothLoss};
    use crate::sparse::SparseDesignMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_lasso(rng: &mut ChaCha8Rng, m: usize, n: usize, c: f64) -> CompositeProblem {
        let dense: Vec<f64> = (0..m * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = SparseDesignMatrix::from_dense(m, n, &dense).unwrap();
        let b = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let reg = if c > 0.0 { SeparableRegularizer::l1(c).unwrap() } else { SeparableRegularizer::Zero };
        CompositeProblem::new(SmoothLoss::quadratic(a, b).unwrap(), reg).unwrap()
    }

    #[test]
    fn zero_direction_has_zero_loss_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = random_lasso(&mut rng, 5, 4, 0.5);
        let mut it = p.iterate(vec![0.1; 4]).unwrap();
        let s = CoordinateSubset::new(vec![0, 2], 4).unwrap();
        let step = it.prepare(&s, vec![0.0, 0.0]).unwrap();
        assert_eq!(loss_delta(&step, p.regularizer(), 0.7), 0.0);
    }

    #[test]
    fn smooth_loss_delta_along_negative_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_lasso(&mut rng, 5, 4, 0.0);
        let mut it = p.iterate(vec![0.3; 4]).unwrap();
        let s = CoordinateSubset::new(vec![1, 3], 4).unwrap();
        let g = it.partial_gradient(&s);
        let step = it.prepare(&s, g.iter().map(|v| -v).collect()).unwrap();
        let alpha = 0.25;
        assert!((loss_delta(&step, p.regularizer(), alpha) - alpha * dot(&g, &g)).abs() < 1e-14);
    }

    #[test]
    fn loss_delta_matches_full_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 6;
        let p = random_lasso(&mut rng, 8, n, 0.4);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut it = p.iterate(x.clone()).unwrap();
        let s = CoordinateSubset::new(vec![0, 1, 4], n).unwrap();
        let t = vec![0.5, -0.2, 0.9];
        let step = it.prepare(&s, t.clone()).unwrap();
        let alpha = 0.5;
        let grad = p.gradient(&x).unwrap();
        let mut y = x.clone();
        s.scatter_add(alpha, &t, &mut y);
        let step_full: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
        // ℓ(x;d) = f(x) + ⟨∇f, d⟩ + Ψ(x + d)
        let naive = -dot(&grad, &step_full) + p.regularizer().value_sum(&x) - p.regularizer().value_sum(&y);
        assert!((loss_delta(&step, p.regularizer(), alpha) - naive).abs() < 1e-12);
    }

    #[test]
    fn exact_subset_newton_takes_unit_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 5;
        let p = random_lasso(&mut rng, 12, n, 0.0);
        let mut it = p.iterate(vec![0.0; n]).unwrap();
        let s = CoordinateSubset::new(vec![0, 2, 3], n).unwrap();
        let model = crate::model::build_model(
            &mut it,
            &s,
            &crate::model::CurvatureStrategy::PrincipalMinor { ridge: 1e-12 },
            None,
        )
        .unwrap();
        let rhs: Vec<f64> = model.gradient().iter().map(|v| -v).collect();
        let t = crate::subsolver::dense_solve(&model.to_dense(), &rhs).unwrap();
        let step = it.prepare(&s, t).unwrap();
        let out = backtrack(&it, &step, &LineSearchConfig::default()).unwrap();
        assert_eq!(out.alpha, 1.0);
        assert_eq!(out.backtracks, 0);
    }

    #[test]
    fn ascent_direction_exhausts() {
        let loss = SmoothLoss::quadratic(SparseDesignMatrix::identity(1), vec![1.0]).unwrap();
        let p = CompositeProblem::new(loss, SeparableRegularizer::Zero).unwrap();
        let mut it = p.iterate(vec![0.0]).unwrap();
        let s = CoordinateSubset::full(1);
        let step = it.prepare(&s, vec![-1.0]).unwrap();
        let cfg = LineSearchConfig { theta: 0.5, max_backtracks: 5 };
        assert_eq!(backtrack(&it, &step, &cfg), Err(FcdError::LineSearchExhausted { trials: 6 }));
    }

    #[test]
    fn curvature_shortcut_picks_the_exact_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (m, n) = (30, 8);
        let dense: Vec<f64> = (0..m * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = (0..m).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let loss = SmoothLoss::logistic(SparseDesignMatrix::from_dense(m, n, &dense).unwrap(), y).unwrap();
        let p = CompositeProblem::new(loss, SeparableRegularizer::l1(0.1).unwrap()).unwrap();
        let cfg = LineSearchConfig { theta: 0.3, max_backtracks: 60 };
        for _ in 0..200 {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut it = p.iterate(x).unwrap();
            let s = CoordinateSubset::new(vec![1, 4, 6], n).unwrap();
            let g = it.partial_gradient(&s);
            let scale = rng.random_range(0.1..50.0);
            let step = it.prepare(&s, g.iter().map(|v| -scale * v).collect()).unwrap();
            let out = backtrack(&it, &step, &cfg).unwrap();
            let mut alpha = 1.0;
            while it.objective_decrease(&step, alpha) < cfg.theta * loss_delta(&step, p.regularizer(), alpha) {
                alpha *= LineSearchConfig::SHRINK;
            }
            assert_eq!(out.alpha, alpha);
        }
    }

    #[test]
    fn worst_case_trial_count() {
        assert_eq!(worst_case_trials(0.0, 2.0, 1.0), 1);
        // floor = 0.5·1/(2·4) = 1/16 → 4 halvings, 5 trials
        assert_eq!(worst_case_trials(0.5, 1.0, 4.0), 5);
    }

    #[test]
    fn theta_range() {
        assert!(LineSearchConfig { theta: 0.0, max_backtracks: 1 }.validate().is_err());
        assert!(LineSearchConfig { theta: 1.0, max_backtracks: 1 }.validate().is_err());
        assert!(LineSearchConfig::default().validate().is_ok());
    }
}
