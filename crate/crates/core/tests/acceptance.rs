//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 4 5`.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use fcd::analysis::{
    expected_contraction, iteration_bound, validate_bound, BoundInputs, BoundRequest, ComplexityConstants, Theorem,
};
use fcd::data::{generate_synthetic, SyntheticKind, SyntheticRecipe};
use fcd::driver::{fcd_run, run_algorithm, ucdc_run, Algorithm, FcdConfig, RunTrace, UcdcVariant};
use fcd::linalg::{dot, norm, norm_inf};
use fcd::linesearch::LineSearchConfig;
use fcd::model::{build_model, CurvatureStrategy, LbfgsHistory, ScaleRule};
use fcd::problem::{CompositeProblem, SmoothLoss};
use fcd::regularizer::{soft_threshold, SeparableRegularizer};
use fcd::sampling::TauNiceSampler;
use fcd::sparse::SparseDesignMatrix;
use fcd::subsolver::{solve_cg_smooth_observed, InexactnessPolicy, InnerSolver};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Allowed round-off when comparing consecutive objective values.
fn monotone_slack(f: f64) -> f64 {
    1e-12 * f.abs().max(1.0)
}

fn random_instance(seed: u64, logistic: bool) -> CompositeProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(50..=500);
    let m = rng.random_range(n / 2..=2 * n);
    let density = rng.random_range(0.05..0.5);
    let c = rng.random_range(0.01..0.5);
    let kind = if logistic {
        SyntheticKind::Logistic { n, m, margin: 0.0, density }
    } else {
        SyntheticKind::Quadratic { n, m, condition: rng.random_range(1.0..1e3), density, support: 0.1 }
    };
    let recipe = SyntheticRecipe { kind, seed };
    generate_synthetic(&recipe, SeparableRegularizer::l1(c).unwrap()).unwrap().problem
}

fn objectives(trace: &RunTrace) -> Vec<f64> {
    std::iter::once(trace.initial_objective)
        .chain(trace.records.iter().map(|r| r.objective))
        .collect()
}

fn criterion_1() -> Outcome {
    let cases: Vec<(u64, bool, Algorithm)> = (0..20u64)
        .flat_map(|s| Algorithm::ALL.into_iter().map(move |a| (s, s % 2 == 1, a)))
        .collect();
    let results: Vec<(usize, usize, f64)> = cases
        .par_iter()
        .map(|&(seed, logistic, algo)| {
            let p = random_instance(100 + seed, logistic);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = FcdConfig {
                tau: rng.random_range(1..=16),
                seed,
                max_iterations: 400,
                stationarity_tol: 0.0,
                ..FcdConfig::default()
            };
            let t = run_algorithm(&p, algo, &cfg).expect("run");
            let f = objectives(&t);
            let bad = f.windows(2).filter(|w| w[1] > w[0] + monotone_slack(w[0])).count();
            let drift = (p.eval_objective(&t.final_x).unwrap() - t.final_objective).abs();
            (bad, f.len() - 1, drift / t.final_objective.abs().max(1.0))
        })
        .collect();
    let violations: usize = results.iter().map(|r| r.0).sum();
    let steps: usize = results.iter().map(|r| r.1).sum();
    let drift = results.iter().map(|r| r.2).fold(0.0, f64::max);
    outcome(
        violations == 0 && drift < 1e-10,
        format!("{violations} increases over {steps} steps in 80 runs, tracked-F drift {drift:.1e}"),
    )
}

/// Instrumented runs across curvature strategies and inner solvers.
fn instrumented_traces() -> Vec<RunTrace> {
    let strategies: Vec<(CurvatureStrategy, InnerSolver, f64)> = vec![
        (CurvatureStrategy::DiagonalHessian { ridge: 1e-3 }, InnerSolver::ClosedFormDiagonal, 0.9),
        (CurvatureStrategy::ScaledIdentity { scale: ScaleRule::SubsetLipschitz }, InnerSolver::ClosedFormDiagonal, 0.5),
        (CurvatureStrategy::Identity, InnerSolver::ClosedFormDiagonal, 0.0),
        (CurvatureStrategy::PrincipalMinor { ridge: 1e-6 }, InnerSolver::ProximalCoordinate, 0.9),
        (CurvatureStrategy::PrincipalMinor { ridge: 1e-2 }, InnerSolver::ProximalCoordinate, 0.3),
        (CurvatureStrategy::LimitedMemoryQn { memory: 5, ridge: 1e-4 }, InnerSolver::ProximalCoordinate, 0.5),
    ];
    let cases: Vec<(usize, u64, bool)> = (0..strategies.len())
        .flat_map(|s| (0..4u64).map(move |seed| (s, seed, seed % 2 == 0)))
        .collect();
    cases
        .par_iter()
        .map(|&(s, seed, logistic)| {
            let (curvature, solver, eta) = strategies[s];
            let p = random_instance(200 + seed, logistic);
            let cfg = FcdConfig {
                tau: 1 + (seed as usize * 3) % 8,
                seed,
                curvature,
                policy: InexactnessPolicy { eta, solver, ..Default::default() },
                max_iterations: 600,
                instrumented: true,
                stationarity_tol: 0.0,
                ..FcdConfig::default()
            };
            fcd_run(&p, &cfg).expect("run")
        })
        .collect()
}

fn criterion_2(traces: &[RunTrace]) -> Outcome {
    let mut total = 0;
    let mut bad = 0;
    let mut worst = f64::INFINITY;
    for t in traces {
        for r in &t.records {
            let b = r.bounds.expect("instrumented");
            total += 1;
            if !b.alpha_ok(r.alpha) {
                bad += 1;
            }
            worst = worst.min(r.alpha / b.alpha_floor);
        }
    }
    outcome(
        bad == 0 && total >= 10_000,
        format!("{bad} violations over {total} steps, min alpha/floor {worst:.3}"),
    )
}

fn criterion_3(traces: &[RunTrace]) -> Outcome {
    let mut total = 0;
    let mut bad = 0;
    let mut worst = f64::INFINITY;
    for t in traces {
        for r in &t.records {
            let b = r.bounds.expect("instrumented");
            total += 1;
            if !b.direction_ok() {
                bad += 1;
            }
            worst = worst.min(b.direction_norm / b.direction_floor);
        }
    }
    outcome(
        bad == 0 && total >= 10_000,
        format!("{bad} violations over {total} directions, min |t|/floor {worst:.3}"),
    )
}

fn criterion_4() -> Outcome {
    let mut checks = 0usize;
    let mut worst: f64 = 0.0;
    let mut subproblems = 0;
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(5..60);
        let m = rng.random_range(5..80);
        let logistic = seed % 2 == 1;
        let kind = if logistic {
            SyntheticKind::Logistic { n, m, margin: 0.0, density: 0.5 }
        } else {
            SyntheticKind::Quadratic { n, m, condition: 10f64.powf(rng.random_range(0.0..6.0)), density: 1.0, support: 0.1 }
        };
        let p = generate_synthetic(&SyntheticRecipe { kind, seed }, SeparableRegularizer::Zero).unwrap().problem;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut it = p.iterate(x).unwrap();
        let tau = rng.random_range(1..=n.min(30));
        let s = TauNiceSampler::new(n, tau, seed).unwrap().sample();
        let strategy = if seed % 3 == 0 {
            CurvatureStrategy::LimitedMemoryQn { memory: 4, ridge: 1e-6 }
        } else {
            CurvatureStrategy::PrincipalMinor { ridge: 1e-8 }
        };
        let mut history = LbfgsHistory::new(4);
        if seed % 3 == 0 {
            for _ in 0..4 {
                let sv: Vec<f64> = (0..tau).map(|_| rng.random_range(-1.0..1.0)).collect();
                let yv: Vec<f64> = sv.iter().map(|v| v * rng.random_range(0.1..10.0)).collect();
                history.push(&s, sv, yv);
            }
        }
        let model = build_model(&mut it, &s, &strategy, Some(&history)).unwrap();
        let g = model.gradient().to_vec();
        let gn = norm(&g);
        if gn == 0.0 {
            continue;
        }
        subproblems += 1;
        let policy = InexactnessPolicy { eta: 1e-12, solver: InnerSolver::ConjugateGradientSmooth, ..Default::default() };
        let _ = solve_cg_smooth_observed(&model, &policy, |t, _| {
            let ht = model.apply_vec(t);
            let lhs = (dot(t, &ht) + dot(t, &g)).abs();
            let scale = norm(t) * gn;
            checks += 1;
            worst = worst.max(lhs / scale);
        });
    }
    outcome(
        worst <= 1e-10 && subproblems >= 900,
        format!("{checks} truncation points on {subproblems} subproblems, max relative defect {worst:.1e}"),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (m, n) = (40, 25);
    let dense: Vec<f64> = (0..m * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let a = SparseDesignMatrix::from_dense(m, n, &dense).unwrap();
    let b: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
    let p = CompositeProblem::new(SmoothLoss::quadratic(a, b).unwrap(), SeparableRegularizer::l1(0.2).unwrap()).unwrap();
    let mut worst: f64 = 0.0;
    for k in 1..=100 {
        let cfg = FcdConfig {
            tau: 1,
            seed: 17,
            curvature: CurvatureStrategy::ScaledIdentity { scale: ScaleRule::SubsetLipschitz },
            policy: InexactnessPolicy { eta: 0.0, solver: InnerSolver::ClosedFormDiagonal, ..Default::default() },
            line_search: LineSearchConfig { theta: 0.25, ..Default::default() },
            max_iterations: k,
            stationarity_tol: 0.0,
            ..FcdConfig::default()
        };
        let f = fcd_run(&p, &cfg).unwrap();
        let u = ucdc_run(&p, &cfg, UcdcVariant::V1).unwrap();
        let d = f.final_x.iter().zip(&u.final_x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(d);
    }
    outcome(worst <= 1e-12, format!("max inf-norm gap over 100 iterations {worst:.1e}"))
}

/// N = 50 quadratic + elastic net, strongly convex, with its SC-N setup.
fn sc_instance() -> (CompositeProblem, f64, FcdConfig) {
    let recipe = SyntheticRecipe {
        kind: SyntheticKind::Quadratic { n: 50, m: 80, condition: 10.0, density: 1.0, support: 0.1 },
        seed: 6,
    };
    let s = generate_synthetic(&recipe, SeparableRegularizer::elastic_net(0.05, 0.05).unwrap()).unwrap();
    let cfg = FcdConfig {
        tau: 2,
        seed: 0,
        curvature: CurvatureStrategy::DiagonalHessian { ridge: 0.0 },
        policy: InexactnessPolicy { eta: 0.0, solver: InnerSolver::ClosedFormDiagonal, ..Default::default() },
        line_search: LineSearchConfig { theta: 0.5, ..Default::default() },
        stationarity_tol: 0.0,
        ..FcdConfig::default()
    };
    (s.problem, s.f_star.unwrap(), cfg)
}

fn criterion_6() -> Outcome {
    let (p, f_star, cfg) = sc_instance();
    let c = ComplexityConstants::for_problem(&p, &cfg).unwrap();
    let gap = p.eval_objective(&vec![0.0; 50]).unwrap() - f_star;
    let inputs = BoundInputs { n: 50, tau: cfg.tau, epsilon: 1e-3 * gap, rho: 0.1, gap, radius: None };
    let k = iteration_bound(Theorem::StronglyConvexNonsmooth, &c, &inputs).unwrap();
    let req = BoundRequest {
        theorem: Theorem::StronglyConvexNonsmooth,
        epsilon: inputs.epsilon,
        rho: 0.1,
        iterations: k,
        f_star,
    };
    let rep = validate_bound(&p, &cfg, &req, 200).unwrap();
    outcome(
        rep.pass,
        format!(
            "K = {k} (chi {:.3e}, delta {:.3e}), success {}/{} = {:.3} vs threshold {:.3}",
            c.chi,
            c.delta.unwrap(),
            rep.successes,
            rep.trials,
            rep.frequency,
            rep.threshold
        ),
    )
}

fn criterion_7() -> Outcome {
    let (p, f_star, cfg) = sc_instance();
    let c = ComplexityConstants::for_problem(&p, &cfg).unwrap();
    let bound = 1.0 - cfg.tau as f64 * c.chi * c.delta.unwrap() / 50.0;
    let est = expected_contraction(&p, &cfg, f_star, 100, 20).unwrap();
    let limit = bound + 3.0 * est.std_error;
    outcome(
        est.mean_ratio <= limit && est.samples >= 2000,
        format!(
            "mean ratio {:.6} (se {:.1e}, {} steps) vs 1 - tau*chi*delta/N = {:.6}",
            est.mean_ratio, est.std_error, est.samples, bound
        ),
    )
}

fn criterion_8() -> Outcome {
    let recipe = SyntheticRecipe {
        kind: SyntheticKind::Logistic { n: 2000, m: 5000, margin: 0.0, density: 0.05 },
        seed: 8,
    };
    let p = generate_synthetic(&recipe, SeparableRegularizer::l1(1.0).unwrap()).unwrap().problem;
    let cfg = FcdConfig {
        tau: FcdConfig::default_tau(2000),
        seed: 8,
        curvature: CurvatureStrategy::DiagonalHessian { ridge: 0.0 },
        policy: InexactnessPolicy { eta: 0.9, solver: InnerSolver::ClosedFormDiagonal, ..Default::default() },
        line_search: LineSearchConfig { theta: 1e-3, ..Default::default() },
        max_iterations: 5000,
        stationarity_tol: 0.0,
        ..FcdConfig::default()
    };
    let t = fcd_run(&p, &cfg).unwrap();
    let unit = t.unit_steps() as f64 / t.records.len() as f64;
    let share = t.timing.line_search_s / t.timing.total_s;
    outcome(
        unit >= 0.95 && share <= 0.20 && t.records.len() == 5000,
        format!(
            "alpha = 1 on {:.1}% of {} steps, line search {:.1}% of {:.2}s",
            100.0 * unit,
            t.records.len(),
            100.0 * share,
            t.timing.total_s
        ),
    )
}

fn criterion_9() -> Outcome {
    let recipe = SyntheticRecipe {
        kind: SyntheticKind::Quadratic { n: 1000, m: 1000, condition: 1e4, density: 1.0, support: 1.0 },
        seed: 9,
    };
    let s = generate_synthetic(&recipe, SeparableRegularizer::l1(0.01).unwrap()).unwrap();
    let f_star = s.f_star.unwrap();
    let budget = 20_000;
    let fcd_cfg = FcdConfig {
        tau: 10,
        seed: 9,
        curvature: CurvatureStrategy::PrincipalMinor { ridge: 1e-6 },
        policy: InexactnessPolicy { eta: 0.1, solver: InnerSolver::ProximalCoordinate, ..Default::default() },
        max_iterations: budget,
        record_every: budget,
        stationarity_tol: 0.0,
        ..FcdConfig::default()
    };
    let ucdc_cfg = FcdConfig { tau: 1, curvature: CurvatureStrategy::Identity, ..fcd_cfg.clone() };
    let (f, u) = rayon::join(
        || fcd_run(&s.problem, &fcd_cfg).unwrap(),
        || ucdc_run(&s.problem, &ucdc_cfg, UcdcVariant::V1).unwrap(),
    );
    // Gaps below round-off are clamped so the ratio stays finite.
    let floor = 1e-15 * f_star.abs().max(1.0);
    let gf = (f.final_objective - f_star).max(floor);
    let gu = (u.final_objective - f_star).max(floor);
    outcome(
        gu >= 10.0 * gf,
        format!("gap FCD {gf:.3e} vs UCDC v1 {gu:.3e} (ratio {:.1}) after {budget} iterations", gu / gf),
    )
}

fn criterion_10() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    let mut check = |name: &str, p: &CompositeProblem, f_star: f64, cfg: &FcdConfig| {
        let t = fcd_run(p, cfg).unwrap();
        let gap = t.final_objective - f_star;
        ok &= gap.abs() <= 1e-8;
        lines.push(format!("{name} {gap:.1e}"));
    };

    // f = ½(x − 3)², Ψ = |x|: x* = 2, F* = 2.5.
    let p = CompositeProblem::new(
        SmoothLoss::quadratic(SparseDesignMatrix::identity(1), vec![3.0]).unwrap(),
        SeparableRegularizer::l1(1.0).unwrap(),
    )
    .unwrap();
    check("scalar lasso", &p, 2.5, &FcdConfig { max_iterations: 50, ..FcdConfig::default() });

    // Diagonal A: coordinate-wise soft thresholding gives x*.
    let n = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let d: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..3.0)).collect();
    let b: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(i, d[i])]).collect();
    let c = 0.7;
    let p = CompositeProblem::new(
        SmoothLoss::quadratic(SparseDesignMatrix::from_rows(n, &rows).unwrap(), b.clone()).unwrap(),
        SeparableRegularizer::l1(c).unwrap(),
    )
    .unwrap();
    let x_star: Vec<f64> = (0..n).map(|i| soft_threshold(d[i] * b[i], c) / (d[i] * d[i])).collect();
    let f_star = p.eval_objective(&x_star).unwrap();
    check("separable lasso", &p, f_star, &FcdConfig { tau: 8, max_iterations: 2000, ..FcdConfig::default() });

    // Planted optimum of a dense quadratic, with and without ℓ1.
    let recipe = SyntheticRecipe {
        kind: SyntheticKind::Quadratic { n: 100, m: 150, condition: 100.0, density: 1.0, support: 0.1 },
        seed: 10,
    };
    for (name, reg) in [
        ("planted quadratic", SeparableRegularizer::Zero),
        ("planted lasso", SeparableRegularizer::l1(0.1).unwrap()),
    ] {
        let s = generate_synthetic(&recipe, reg).unwrap();
        let cfg = FcdConfig {
            tau: 10,
            max_iterations: 20_000,
            stationarity_tol: 1e-12,
            ..FcdConfig::fcd_v2(10)
        };
        check(name, &s.problem, s.f_star.unwrap(), &cfg);
        let _ = norm_inf(&s.x_star.unwrap());
    }
    outcome(ok, format!("final gaps: {}", lines.join(", ")))
}

fn main() -> ExitCode {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |i: usize| wanted.is_empty() || wanted.contains(&i);
    let names = [
        "monotone decrease",
        "step-size floor",
        "direction-norm bound",
        "CG energy identity",
        "UCDC equivalence",
        "high-probability bound",
        "expected contraction",
        "unit-step prevalence",
        "curvature advantage",
        "solution accuracy",
    ];
    let mut instrumented: Option<Vec<RunTrace>> = None;
    let mut failed = 0;
    for (idx, name) in names.iter().enumerate() {
        let i = idx + 1;
        if !run(i) {
            continue;
        }
        let start = Instant::now();
        let out = match i {
            1 => criterion_1(),
            2 | 3 => {
                let traces = instrumented.get_or_insert_with(instrumented_traces);
                if i == 2 {
                    criterion_2(traces)
                } else {
                    criterion_3(traces)
                }
            }
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(),
            7 => criterion_7(),
            8 => criterion_8(),
            9 => criterion_9(),
            _ => criterion_10(),
        };
        if !out.pass {
            failed += 1;
        }
        println!(
            "criterion {i:>2} {} {name}: {} [{:.1}s]",
            if out.pass { "PASS" } else { "FAIL" },
            out.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
