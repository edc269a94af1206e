//! Coordinate-separable convex regularizers `Ψ(x) = Σ_i Ψ_i(x_i)`.
//!
//! Every variant applies the same scalar function to each coordinate:
//!
//! | variant      | `Ψ_i(y)`                  |
//! |--------------|---------------------------|
//! | `Zero`       | `0`                       |
//! | `L1`         | `c·|y|`                   |
//! | `SquaredL2`  | `(w/2)·y²`                |
//! | `ElasticNet` | `l1·|y| + (l2/2)·y²`      |

use serde::{Deserialize, Serialize};

use crate::error::{FcdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SeparableRegularizer {
    Zero,
    L1 { c: f64 },
    SquaredL2 { weight: f64 },
    ElasticNet { l1: f64, l2: f64 },
}

/// Soft-thresholding `sign(u)·max(|u| − v, 0)`.
pub fn soft_threshold(u: f64, v: f64) -> f64 {
    if u > v {
        u - v
    } else if u < -v {
        u + v
    } else {
        0.0
    }
}

fn check_weight(name: &str, w: f64) -> Result<()> {
    if w.is_finite() && w > 0.0 {
        Ok(())
    } else {
        Err(FcdError::InvalidParameter(format!(
            "{name} weight must be finite and > 0, got {w}"
        )))
    }
}

impl SeparableRegularizer {
    pub fn l1(c: f64) -> Result<Self> {
        check_weight("l1", c)?;
        Ok(Self::L1 { c })
    }

    pub fn squared_l2(weight: f64) -> Result<Self> {
        check_weight("squared l2", weight)?;
        Ok(Self::SquaredL2 { weight })
    }

    pub fn elastic_net(l1: f64, l2: f64) -> Result<Self> {
        check_weight("elastic net l1", l1)?;
        check_weight("elastic net l2", l2)?;
        Ok(Self::ElasticNet { l1, l2 })
    }

    /// Re-validate weights, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Zero => Ok(()),
            Self::L1 { c } => check_weight("l1", c),
            Self::SquaredL2 { weight } => check_weight("squared l2", weight),
            Self::ElasticNet { l1, l2 } => {
                check_weight("elastic net l1", l1)?;
                check_weight("elastic net l2", l2)
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero)
    }

    /// `Ψ_i(y)`.
    pub fn value(&self, y: f64) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::L1 { c } => c * y.abs(),
            Self::SquaredL2 { weight } => 0.5 * weight * y * y,
            Self::ElasticNet { l1, l2 } => l1 * y.abs() + 0.5 * l2 * y * y,
        }
    }

    /// `Ψ_i(y + d) − Ψ_i(y)` without forming `y + d` where avoidable, so
    /// small steps away from large `|y|` are not lost to rounding.
    pub fn value_change(&self, y: f64, d: f64) -> f64 {
        let abs_change = |y: f64, d: f64| {
            let z = y + d;
            if y > 0.0 && z > 0.0 {
                d
            } else if y < 0.0 && z < 0.0 {
                -d
            } else {
                z.abs() - y.abs()
            }
        };
        match *self {
            Self::Zero => 0.0,
            Self::L1 { c } => c * abs_change(y, d),
            Self::SquaredL2 { weight } => 0.5 * weight * d * (2.0 * y + d),
            Self::ElasticNet { l1, l2 } => l1 * abs_change(y, d) + 0.5 * l2 * d * (2.0 * y + d),
        }
    }

    /// `Σ_i Ψ_i(y_i)`.
    pub fn value_sum(&self, y: &[f64]) -> f64 {
        match self {
            Self::Zero => 0.0,
            _ => y.iter().map(|&v| self.value(v)).sum(),
        }
    }

    /// Strong convexity modulus of each `Ψ_i`.
    pub fn strong_convexity(&self) -> f64 {
        match *self {
            Self::Zero | Self::L1 { .. } => 0.0,
            Self::SquaredL2 { weight } => weight,
            Self::ElasticNet { l2, .. } => l2,
        }
    }

    /// `argmin_y Ψ_i(y) + (h/2)(y − z)²` for curvature weight `h > 0`.
    pub fn prox(&self, z: f64, h: f64) -> Result<f64> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(FcdError::InvalidParameter(format!(
                "prox curvature weight must be > 0, got {h}"
            )));
        }
        Ok(self.prox_unchecked(z, h))
    }

    pub(crate) fn prox_unchecked(&self, z: f64, h: f64) -> f64 {
        match *self {
            Self::Zero => z,
            Self::L1 { c } => soft_threshold(z, c / h),
            Self::SquaredL2 { weight } => h * z / (h + weight),
            Self::ElasticNet { l1, l2 } => soft_threshold(h * z, l1) / (h + l2),
        }
    }

    /// Unit-step prox of the convex conjugate, via the Moreau identity
    /// `prox_{Ψ*}(z) = z − prox_Ψ(z)`.
    pub fn conjugate_prox(&self, z: f64) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::L1 { c } => z.clamp(-c, c),
            Self::SquaredL2 { weight } => weight * z / (1.0 + weight),
            Self::ElasticNet { .. } => z - self.prox_unchecked(z, 1.0),
        }
    }

    /// Componentwise conjugate prox of a vector.
    pub fn conjugate_prox_vec(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|&v| self.conjugate_prox(v)).collect()
    }

    /// The interval `[lo, hi]` equal to the subdifferential `∂Ψ_i(y)`.
    pub fn subdifferential(&self, y: f64) -> (f64, f64) {
        let sign_part = |c: f64| {
            if y > 0.0 {
                (c, c)
            } else if y < 0.0 {
                (-c, -c)
            } else {
                (-c, c)
            }
        };
        match *self {
            Self::Zero => (0.0, 0.0),
            Self::L1 { c } => sign_part(c),
            Self::SquaredL2 { weight } => (weight * y, weight * y),
            Self::ElasticNet { l1, l2 } => {
                let (lo, hi) = sign_part(l1);
                (lo + l2 * y, hi + l2 * y)
            }
        }
    }

    /// The element of `∂Ψ_i(point)` closest to `target`.
    pub fn subdifferential_project(&self, point: f64, target: f64) -> f64 {
        let (lo, hi) = self.subdifferential(point);
        target.clamp(lo, hi)
    }
}
