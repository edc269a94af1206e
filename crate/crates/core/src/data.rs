//! LIBSVM text format and synthetic problem generators.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{FcdError, Result};
use crate::problem::{CompositeProblem, SmoothLoss};
use crate::regularizer::SeparableRegularizer;
use crate::sparse::SparseDesignMatrix;

/// Parse LIBSVM text: `label idx:val idx:val ...` with 1-based, strictly
/// increasing indices. Labels `0` are mapped to `−1`. Text after `#` and
/// blank lines are ignored. The column count is `max index` unless `n` is
/// given, in which case it must cover every index.
pub fn parse_libsvm<R: Read>(reader: R, n: Option<usize>) -> Result<(SparseDesignMatrix, Vec<f64>)> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut max_col = 0usize;
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = lineno + 1;
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| FcdError::Parse { line: line_no, message };
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| err(format!("bad label `{label_tok}`")))?;
        let label = match label {
            l if l == 1.0 => 1.0,
            l if l == -1.0 || l == 0.0 => -1.0,
            _ => return Err(err(format!("label `{label_tok}` is not one of -1, 0, +1"))),
        };
        let mut row = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("expected index:value, got `{tok}`")))?;
            let idx: usize = idx.parse().map_err(|_| err(format!("bad index `{idx}`")))?;
            if idx == 0 {
                return Err(err("indices are 1-based".into()));
            }
            if idx <= last {
                return Err(err(format!("index {idx} does not increase after {last}")));
            }
            let val: f64 = val.parse().map_err(|_| err(format!("bad value `{val}`")))?;
            if !val.is_finite() {
                return Err(err(format!("non-finite value `{val}`")));
            }
            last = idx;
            row.push((idx - 1, val));
        }
        max_col = max_col.max(last);
        rows.push(row);
        labels.push(label);
    }
    let cols = match n {
        Some(n) if n < max_col => {
            return Err(FcdError::InvalidParameter(format!(
                "column override {n} is below the largest index {max_col}"
            )))
        }
        Some(n) => n,
        None => max_col,
    };
    Ok((SparseDesignMatrix::from_rows(cols, &rows)?, labels))
}

pub fn read_libsvm(path: &Path, n: Option<usize>) -> Result<(SparseDesignMatrix, Vec<f64>)> {
    parse_libsvm(File::open(path)?, n)
}

pub fn write_libsvm_to<W: Write>(out: W, a: &SparseDesignMatrix, labels: &[f64]) -> Result<()> {
    if labels.len() != a.rows() {
        return Err(FcdError::DimensionMismatch {
            expected: a.rows(),
            got: labels.len(),
        });
    }
    let mut w = BufWriter::new(out);
    for (r, &label) in labels.iter().enumerate() {
        write!(w, "{}", if label > 0.0 { "+1" } else { "-1" })?;
        let (idx, vals) = a.row(r);
        for (c, v) in idx.iter().zip(vals) {
            // `{}` prints the shortest representation that parses back exactly.
            write!(w, " {}:{}", c + 1, v)?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_libsvm(path: &Path, a: &SparseDesignMatrix, labels: &[f64]) -> Result<()> {
    write_libsvm_to(File::create(path)?, a, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticKind {
    /// `f = ½‖Ax − b‖²` with `A` of size `m × n`. With `density = 1` the
    /// spectrum of `AᵀA` spans `[1/κ, 1]` geometrically. Sparse matrices get
    /// Gaussian entries with columns scaled so `max L_i / min L_i ≈ κ`.
    Quadratic {
        n: usize,
        m: usize,
        condition: f64,
        density: f64,
        /// Fraction of nonzero entries in the planted solution.
        #[serde(default = "default_support")]
        support: f64,
    },
    /// Logistic loss on Gaussian features with labels from a planted
    /// separator; rows with `|a_jᵀw| < margin` are redrawn.
    Logistic {
        n: usize,
        m: usize,
        margin: f64,
        density: f64,
    },
}

fn default_support() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRecipe {
    #[serde(flatten)]
    pub kind: SyntheticKind,
    pub seed: u64,
}

impl SyntheticRecipe {
    pub fn validate(&self) -> Result<()> {
        let (n, m, density) = match self.kind {
            SyntheticKind::Quadratic { n, m, condition, density, support } => {
                if !(condition >= 1.0) || !condition.is_finite() {
                    return Err(FcdError::InvalidParameter(format!("condition number must be >= 1, got {condition}")));
                }
                if !(support > 0.0 && support <= 1.0) {
                    return Err(FcdError::InvalidParameter(format!("support must lie in (0, 1], got {support}")));
                }
                (n, m, density)
            }
            SyntheticKind::Logistic { n, m, margin, density } => {
                if !(margin >= 0.0) {
                    return Err(FcdError::InvalidParameter(format!("margin must be >= 0, got {margin}")));
                }
                (n, m, density)
            }
        };
        if n < 1 || m < 1 {
            return Err(FcdError::InvalidParameter(format!("need n, m >= 1, got n = {n}, m = {m}")));
        }
        if !(density > 0.0 && density <= 1.0) {
            return Err(FcdError::InvalidParameter(format!("density must lie in (0, 1], got {density}")));
        }
        Ok(())
    }
}

/// A generated problem with whatever is known about its optimum.
#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    pub problem: CompositeProblem,
    pub x_star: Option<Vec<f64>>,
    pub f_star: Option<f64>,
}

/// Build a problem from a recipe. Dense quadratics with `m ≥ n` plant a
/// minimizer for any regularizer and carry their strong convexity moduli;
/// other quadratics plant one only for `Ψ = 0`.
pub fn generate_synthetic(recipe: &SyntheticRecipe, reg: SeparableRegularizer) -> Result<SyntheticProblem> {
    recipe.validate()?;
    reg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    match recipe.kind {
        SyntheticKind::Quadratic { n, m, condition, density, support } if density >= 1.0 => {
            dense_quadratic(&mut rng, n, m, condition, support, reg)
        }
        SyntheticKind::Quadratic { n, m, condition, density, support } => {
            let a = sparse_gaussian(&mut rng, n, m, density, |c| {
                // Column scale s_c with s_c² geometric from 1 down to 1/κ.
                if n == 1 {
                    1.0
                } else {
                    condition.powf(-0.5 * c as f64 / (n - 1) as f64)
                }
            })?;
            let x_star = planted_vector(&mut rng, n, support);
            let mut b = vec![0.0; m];
            a.mul_vec(&x_star, &mut b);
            let problem = CompositeProblem::new(SmoothLoss::quadratic(a, b)?, reg)?;
            let known = reg.is_zero();
            Ok(SyntheticProblem {
                problem,
                x_star: known.then_some(x_star),
                f_star: known.then_some(0.0),
            })
        }
        SyntheticKind::Logistic { n, m, margin, density } => {
            let w: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let scale = 1.0 / (n as f64 * density).sqrt();
            let binom = Binomial::new(n as u64, density).map_err(|e| FcdError::InvalidParameter(e.to_string()))?;
            let mut rows = Vec::with_capacity(m);
            let mut labels = Vec::with_capacity(m);
            for _ in 0..m {
                let mut drawn = None;
                for _ in 0..1000 {
                    let row = sparse_row(&mut rng, n, &binom, scale);
                    let z: f64 = row.iter().map(|&(c, v)| v * w[c]).sum();
                    if z.abs() >= margin && !row.is_empty() {
                        drawn = Some((row, if z >= 0.0 { 1.0 } else { -1.0 }));
                        break;
                    }
                }
                let (row, label) = drawn.ok_or_else(|| {
                    FcdError::InvalidParameter(format!("margin {margin} is infeasible for this density"))
                })?;
                rows.push(row);
                labels.push(label);
            }
            let a = SparseDesignMatrix::from_rows(n, &rows)?;
            let problem = CompositeProblem::new(SmoothLoss::logistic(a, labels)?, reg)?;
            Ok(SyntheticProblem {
                problem,
                x_star: None,
                f_star: None,
            })
        }
    }
}

fn sparse_row(rng: &mut ChaCha8Rng, n: usize, binom: &Binomial, scale: f64) -> Vec<(usize, f64)> {
    let k = binom.sample(rng) as usize;
    let mut cols = sample_indices(rng, n, k).into_vec();
    cols.sort_unstable();
    cols.into_iter()
        .map(|c| (c, scale * rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

fn sparse_gaussian(
    rng: &mut ChaCha8Rng,
    n: usize,
    m: usize,
    density: f64,
    col_scale: impl Fn(usize) -> f64,
) -> Result<SparseDesignMatrix> {
    let binom = Binomial::new(n as u64, density).map_err(|e| FcdError::InvalidParameter(e.to_string()))?;
    let scale = 1.0 / (m as f64 * density).sqrt();
    let rows: Vec<Vec<(usize, f64)>> = (0..m)
        .map(|_| {
            let mut row = sparse_row(rng, n, &binom, scale);
            row.iter_mut().for_each(|(c, v)| *v *= col_scale(*c));
            row
        })
        .collect();
    SparseDesignMatrix::from_rows(n, &rows)
}

/// Planted solution with `⌈support·n⌉` nonzeros of magnitude in `[1, 2)`.
fn planted_vector(rng: &mut ChaCha8Rng, n: usize, support: f64) -> Vec<f64> {
    let k = ((support * n as f64).ceil() as usize).clamp(1, n);
    let mut x = vec![0.0; n];
    for i in sample_indices(rng, n, k) {
        let mag = 1.0 + rng.random::<f64>();
        x[i] = if rng.random::<bool>() { mag } else { -mag };
    }
    x
}

fn haar_orthogonal(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Fix column signs so the distribution is uniform.
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn dense_quadratic(
    rng: &mut ChaCha8Rng,
    n: usize,
    m: usize,
    condition: f64,
    support: f64,
    reg: SeparableRegularizer,
) -> Result<SyntheticProblem> {
    let r = n.min(m);
    // Squared singular values geometric from 1 down to 1/κ.
    let sigma: Vec<f64> = (0..r)
        .map(|i| {
            if r == 1 {
                1.0
            } else {
                condition.powf(-0.5 * i as f64 / (r - 1) as f64)
            }
        })
        .collect();
    let u = haar_orthogonal(rng, m);
    let v = haar_orthogonal(rng, n);
    let u_r = u.columns(0, r);
    let v_r = v.columns(0, r);
    let mut us = u_r.clone_owned();
    for (j, s) in sigma.iter().enumerate() {
        us.column_mut(j).scale_mut(*s);
    }
    let a = &us * v_r.transpose();
    let x_star = planted_vector(rng, n, support);
    let x_vec = nalgebra::DVector::from_column_slice(&x_star);
    let ax = &a * &x_vec;

    let full_rank = m >= n;
    let (b, x_star, f_star) = if full_rank {
        // Choose the residual r = b − Ax* with Aᵀr = g ∈ ∂Ψ(x*):
        // r = U_r Σ⁻¹ Vᵀ g.
        let g: Vec<f64> = x_star
            .iter()
            .map(|&xi| {
                let (lo, hi) = reg.subdifferential(xi);
                if lo == hi {
                    lo
                } else {
                    // Strictly inside the interval at zero coordinates.
                    let mid = 0.5 * (lo + hi);
                    mid + 0.5 * (hi - lo) * rng.random_range(-0.5..0.5)
                }
            })
            .collect();
        let mut coef = v.transpose() * nalgebra::DVector::from_column_slice(&g);
        for (j, s) in sigma.iter().enumerate() {
            coef[j] /= s;
        }
        let resid = u_r * coef;
        let f_star = 0.5 * resid.norm_squared() + reg.value_sum(&x_star);
        ((ax + resid).as_slice().to_vec(), Some(x_star), Some(f_star))
    } else if reg.is_zero() {
        (ax.as_slice().to_vec(), Some(x_star), Some(0.0))
    } else {
        (ax.as_slice().to_vec(), None, None)
    };

    let mut row_major = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            row_major.push(a[(i, j)]);
        }
    }
    let a = SparseDesignMatrix::from_dense(m, n, &row_major)?;
    let mut problem = CompositeProblem::new(SmoothLoss::quadratic(a, b)?, reg)?;
    if full_rank {
        let mu_f = sigma[r - 1] * sigma[r - 1];
        problem = problem.with_strong_convexity(mu_f, mu_f + reg.strong_convexity())?;
    }
    Ok(SyntheticProblem { problem, x_star, f_star })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm_inf;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn single_entry_line() {
        let (a, y) = parse_libsvm("+1 3:0.5\n".as_bytes(), None).unwrap();
        assert_eq!((a.rows(), a.cols()), (1, 3));
        assert_eq!(a.row(0), (&[2usize][..], &[0.5][..]));
        assert_eq!(y, vec![1.0]);
    }

    #[test]
    fn empty_row_and_label_coercion() {
        let (a, y) = parse_libsvm("-1\n0 1:2 # comment\n\n1 2:1e-3\n".as_bytes(), Some(5)).unwrap();
        assert_eq!(a.rows(), 3);
        assert_eq!(a.cols(), 5);
        assert_eq!(a.row(0).0.len(), 0);
        assert_eq!(y, vec![-1.0, -1.0, 1.0]);
    }

    #[test]
    fn rejects_malformed_lines_with_line_numbers() {
        let cases = [
            ("+1 1:1\n+1 3:1 2:1\n", 2),
            ("+1 1:1 1:2\n", 1),
            ("2 1:1\n", 1),
            ("+1 1:1\nfoo 1:1\n", 2),
            ("+1 0:1\n", 1),
            ("+1 a:1\n", 1),
            ("+1 1:x\n", 1),
            ("+1 1\n", 1),
            ("\n\n+1 1:nan\n", 3),
        ];
        for (text, want) in cases {
            match parse_libsvm(text.as_bytes(), None) {
                Err(FcdError::Parse { line, .. }) => assert_eq!(line, want, "{text:?}"),
                other => panic!("{text:?} gave {other:?}"),
            }
        }
        assert!(matches!(
            parse_libsvm("+1 4:1\n".as_bytes(), Some(3)),
            Err(FcdError::InvalidParameter(_))
        ));
    }

    proptest! {
        #[test]
        fn writer_output_parses_back(seed in 0u64..1000, m in 1usize..12, n in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<(usize, f64)>> = (0..m)
                .map(|_| {
                    let mut row = Vec::new();
                    for c in 0..n {
                        if rng.random::<f64>() < 0.4 {
                            row.push((c, rng.random_range(-1e3..1e3)));
                        }
                    }
                    row
                })
                .collect();
            let labels: Vec<f64> = (0..m).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            let a = SparseDesignMatrix::from_rows(n, &rows).unwrap();
            let mut buf = Vec::new();
            write_libsvm_to(&mut buf, &a, &labels).unwrap();
            let (b, y) = parse_libsvm(buf.as_slice(), Some(n)).unwrap();
            prop_assert_eq!(y, labels);
            prop_assert_eq!(b.to_dense(), a.to_dense());
        }
    }

    fn ata(p: &CompositeProblem) -> DMatrix<f64> {
        let a = p.loss().matrix();
        let d = DMatrix::from_row_slice(a.rows(), a.cols(), &a.to_dense());
        d.transpose() * d
    }

    #[test]
    fn unit_condition_gives_scaled_identity_hessian() {
        let r = SyntheticRecipe {
            kind: SyntheticKind::Quadratic { n: 6, m: 9, condition: 1.0, density: 1.0, support: 0.1 },
            seed: 4,
        };
        let s = generate_synthetic(&r, SeparableRegularizer::Zero).unwrap();
        let h = ata(&s.problem);
        let diff = &h - DMatrix::identity(6, 6) * h[(0, 0)];
        assert!(diff.amax() < 1e-12);
    }

    #[test]
    fn requested_condition_number_is_realized() {
        let r = SyntheticRecipe {
            kind: SyntheticKind::Quadratic { n: 20, m: 30, condition: 1e3, density: 1.0, support: 0.1 },
            seed: 5,
        };
        let s = generate_synthetic(&r, SeparableRegularizer::Zero).unwrap();
        let eig = ata(&s.problem).symmetric_eigenvalues();
        let kappa = eig.max() / eig.min();
        assert!((kappa / 1e3 - 1.0).abs() < 1e-8, "{kappa}");
        assert!((s.problem.mu_f().unwrap() - eig.min()).abs() < 1e-12);
    }

    #[test]
    fn planted_lasso_satisfies_optimality() {
        let r = SyntheticRecipe {
            kind: SyntheticKind::Quadratic { n: 15, m: 25, condition: 50.0, density: 1.0, support: 0.1 },
            seed: 6,
        };
        for reg in [
            SeparableRegularizer::l1(0.3).unwrap(),
            SeparableRegularizer::elastic_net(0.2, 0.5).unwrap(),
        ] {
            let s = generate_synthetic(&r, reg).unwrap();
            let x = s.x_star.as_ref().unwrap();
            assert!(norm_inf(&s.problem.stationarity_residual(x).unwrap()) < 1e-10);
            assert!((s.problem.eval_objective(x).unwrap() - s.f_star.unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn realized_density_near_request() {
        let r = SyntheticRecipe {
            kind: SyntheticKind::Logistic { n: 1000, m: 500, margin: 0.0, density: 0.1 },
            seed: 7,
        };
        let s = generate_synthetic(&r, SeparableRegularizer::l1(0.1).unwrap()).unwrap();
        let d = s.problem.loss().matrix().density();
        assert!((d / 0.1 - 1.0).abs() <= 0.1, "{d}");
        let q = SyntheticRecipe {
            kind: SyntheticKind::Quadratic { n: 1000, m: 500, condition: 10.0, density: 0.1, support: 0.1 },
            seed: 8,
        };
        let d = generate_synthetic(&q, SeparableRegularizer::Zero).unwrap().problem.loss().matrix().density();
        assert!((d / 0.1 - 1.0).abs() <= 0.1, "{d}");
    }

    #[test]
    fn logistic_margin_holds() {
        let r = SyntheticRecipe {
            kind: SyntheticKind::Logistic { n: 40, m: 60, margin: 0.2, density: 0.5 },
            seed: 9,
        };
        let s = generate_synthetic(&r, SeparableRegularizer::Zero).unwrap();
        let y = s.problem.loss().targets();
        assert!(y.iter().all(|v| *v == 1.0 || *v == -1.0));
    }

    #[test]
    fn infeasible_recipes() {
        let bad = [
            SyntheticKind::Quadratic { n: 0, m: 3, condition: 1.0, density: 1.0, support: 0.1 },
            SyntheticKind::Quadratic { n: 3, m: 0, condition: 1.0, density: 1.0, support: 0.1 },
            SyntheticKind::Quadratic { n: 3, m: 3, condition: 0.5, density: 1.0, support: 0.1 },
            SyntheticKind::Logistic { n: 3, m: 3, margin: 0.0, density: 0.0 },
            SyntheticKind::Logistic { n: 3, m: 3, margin: -1.0, density: 0.5 },
        ];
        for kind in bad {
            assert!(generate_synthetic(&SyntheticRecipe { kind, seed: 0 }, SeparableRegularizer::Zero).is_err());
        }
    }
}
