//! τ-nice sampling: uniform random subsets of fixed size τ.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{FcdError, Result};
use crate::problem::CoordinateSubset;

/// Draws size-τ subsets of `[0, N)` uniformly, sorted.
///
/// Keeps a persistent permutation and runs a partial Fisher-Yates shuffle
/// over its first τ slots, so each draw costs O(τ log τ).
#[derive(Debug, Clone)]
pub struct TauNiceSampler {
    n: usize,
    tau: usize,
    rng: ChaCha8Rng,
    perm: Vec<usize>,
}

impl TauNiceSampler {
    pub fn new(n: usize, tau: usize, seed: u64) -> Result<Self> {
        if tau == 0 || tau > n {
            return Err(FcdError::InvalidParameter(format!(
                "tau must lie in [1, {n}], got {tau}"
            )));
        }
        Ok(Self {
            n,
            tau,
            rng: ChaCha8Rng::seed_from_u64(seed),
            perm: (0..n).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn sample(&mut self) -> CoordinateSubset {
        if self.tau == self.n {
            return CoordinateSubset::full(self.n);
        }
        for k in 0..self.tau {
            let j = self.rng.random_range(k..self.n);
            self.perm.swap(k, j);
        }
        let mut idx = self.perm[..self.tau].to_vec();
        idx.sort_unstable();
        CoordinateSubset::new(idx, self.n).expect("sampled subset is valid")
    }

    /// Monte-Carlo estimate of `E[Σ_{i∈S} θ_i]`; the exact value is
    /// `(τ/N) Σ_i θ_i`.
    pub fn subset_expectation_check(&mut self, theta: &[f64], trials: usize) -> Result<f64> {
        if theta.len() != self.n {
            return Err(FcdError::DimensionMismatch {
                expected: self.n,
                got: theta.len(),
            });
        }
        if trials == 0 {
            return Err(FcdError::InvalidParameter("trials must be >= 1".into()));
        }
        let mut total = 0.0;
        for _ in 0..trials {
            let s = self.sample();
            total += s.indices().iter().map(|&i| theta[i]).sum::<f64>();
        }
        Ok(total / trials as f64)
    }
}
