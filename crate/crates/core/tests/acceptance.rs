//! End-to-end acceptance checks, one line per criterion.
//!
//! Run with `cargo test --release --test acceptance` (optionally followed by
//! `-- 1 5 6` to select criteria). Exits nonzero when any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use redspace::acquisition::{
    constrained_weight, ei, maximize_acquisition, GammaSchedule, MaximizerConfig,
};
use redspace::benchmarks::*;
use redspace::doe::{normalize, plackett_burman};
use redspace::evaluator::{external_evaluator, EvaluatorSpec};
use redspace::experiment::{run_experiment, ExperimentConfig};
use redspace::gp::*;
use redspace::linalg::{random_orthonormal, standard_normal_matrix};
use redspace::optimizer::*;
use redspace::ppls::*;
use redspace::reduction::{nipals_fit, pca_fit};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Runs every (config, seed) pair concurrently, in a deterministic order.
fn run_all(problem: &redspace::problem::Problem, configs: &[RunConfig], seeds: &[u64]) -> Vec<Vec<Trace>> {
    let jobs: Vec<(usize, u64)> = (0..configs.len()).flat_map(|c| seeds.iter().map(move |s| (c, *s))).collect();
    let traces: Vec<Trace> = jobs
        .par_iter()
        .map(|(c, s)| {
            let cfg = RunConfig { seed: *s, ..configs[*c].clone() };
            run(problem, &cfg).unwrap_or_else(|e| panic!("{e}"))
        })
        .collect();
    let mut out = vec![Vec::new(); configs.len()];
    for ((c, _), t) in jobs.into_iter().zip(traces) {
        out[c].push(t);
    }
    out
}

fn final_incumbents(traces: &[Trace]) -> Vec<f64> {
    traces.iter().map(|t| t.final_incumbent().unwrap_or(f64::INFINITY)).collect()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ")
}

// ---------------------------------------------------------------- criterion 1

fn pbd_bases() -> Outcome {
    let b = benchmark(ILLUSTRATIVE).unwrap();
    let s = plackett_burman(&b.problem.domain).unwrap();
    let y = DMatrix::from_fn(s.nrows(), 2, |i, j| {
        let row: Vec<f64> = s.row(i).iter().copied().collect();
        b.problem.evaluate(&row, 0).unwrap()[j]
    });
    let data = normalize(&s, &y).unwrap();
    let pls = nipals_fit(&data, 2).unwrap().w;
    let (ppls, _) = em_fit(&data, &EmConfig::new(2, 100, 0), None).unwrap();
    let pca = pca_fit(&data, 2).unwrap().w;
    let near = |w: &DMatrix<f64>| (w[(0, 0)].abs() - 0.925).abs() <= 0.05 && (w[(1, 0)].abs() - 0.381).abs() <= 0.05;
    let pls_ok = near(&pls);
    let ppls_ok = near(&ppls.w);
    let pca_ok = pca[(0, 0)].abs() < 0.5 && pca[(1, 0)].abs() < 0.5;
    outcome(
        pls_ok && ppls_ok && pca_ok,
        format!(
            "runs {}; |W11|,|W21| PLS {:.4},{:.4} [{}] PPLS {:.4},{:.4} [{}] PCA {:.4},{:.4} [{}]",
            s.nrows(),
            pls[(0, 0)].abs(),
            pls[(1, 0)].abs(),
            ok(pls_ok),
            ppls.w[(0, 0)].abs(),
            ppls.w[(1, 0)].abs(),
            ok(ppls_ok),
            pca[(0, 0)].abs(),
            pca[(1, 0)].abs(),
            ok(pca_ok),
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "miss"
    }
}

// ---------------------------------------------------------------- criterion 2

/// Feasible minimum of the illustrative problem on a 2000 × 2000 grid over
/// (s₁, s₂) with the trailing coordinates at zero.
fn illustrative_oracle() -> f64 {
    let m = 2000;
    let mut best = f64::INFINITY;
    let mut s = vec![0.0; 20];
    for i in 0..m {
        for j in 0..m {
            s[0] = i as f64 / (m - 1) as f64;
            s[1] = j as f64 / (m - 1) as f64;
            if illustrative_constraint(&s).unwrap() <= 0.0 {
                best = best.min(illustrative_objective(&s).unwrap());
            }
        }
    }
    best
}

fn illustrative_config(method: Method, d_z: usize) -> RunConfig {
    RunConfig {
        method,
        d_z,
        n_k: 100,
        n_l: 200,
        init: InitDesign::Pbd { extra_lhs: 3 },
        ..Default::default()
    }
}

const SEEDS: [u64; 10] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9];

fn illustrative_convergence() -> Outcome {
    let oracle = illustrative_oracle();
    let b = benchmark(ILLUSTRATIVE).unwrap();
    let methods = [(Method::PplsBo, 2), (Method::PlsBo, 2), (Method::PcaBo, 8), (Method::Bo, 2)];
    let configs: Vec<RunConfig> = methods.iter().map(|(m, d)| illustrative_config(*m, *d)).collect();
    let traces = run_all(&b.problem, &configs, &SEEDS);
    let finals: Vec<Vec<f64>> = traces.iter().map(|t| final_incumbents(t)).collect();
    let med: Vec<f64> = finals.iter().map(|f| median(f)).collect();
    let within = |m: f64| (m - oracle).abs() <= 0.01 * oracle.abs();
    let ppls_ok = within(med[0]);
    let pls_ok = within(med[1]);
    let pca_beats_bo = med[2] < med[3];
    let ordered = med[0] <= med[1] && med[1] <= med[2] && med[2] <= med[3];
    let mut detail = format!(
        "oracle {oracle:.5}; medians PPLS {:.5} [{}] PLS {:.5} [{}] PCA {:.5} BO {:.5}; PCA<BO [{}]; ordering [{}]",
        med[0],
        ok(ppls_ok),
        med[1],
        ok(pls_ok),
        med[2],
        med[3],
        ok(pca_beats_bo),
        ok(ordered)
    );
    for ((m, _), f) in methods.iter().zip(&finals) {
        detail.push_str(&format!("\n      {:<8} {}", m.label(), fmt_list(f)));
    }
    outcome(ppls_ok && pls_ok && pca_beats_bo && ordered, detail)
}

// ---------------------------------------------------------------- criterion 3

fn offline_residual(s: &[f64], d: &IterationDigest, d_z: usize) -> f64 {
    let w = DMatrix::from_row_slice(s.len(), d_z, d.basis.as_ref().unwrap());
    let x = DVector::from_fn(s.len(), |i, _| (s[i] - d.mean_s[i]) / d.scale_s[i]);
    (&x - &w * (w.transpose() * &x)).norm()
}

fn residuals(t: &Trace) -> Vec<f64> {
    t.digests
        .iter()
        .map(|d| offline_residual(&t.rows[t.n_init + d.k - 1].s, d, 1))
        .collect()
}

fn misspecification() -> Outcome {
    let b = benchmark(ILLUSTRATIVE).unwrap();
    let configs = [illustrative_config(Method::PplsBo, 1), illustrative_config(Method::PlsBo, 1)];
    let traces = run_all(&b.problem, &configs, &SEEDS);
    let ppls_final = final_incumbents(&traces[0]);
    let pls_final = final_incumbents(&traces[1]);
    let (mp, ml) = (median(&ppls_final), median(&pls_final));
    let ppls_off = traces[0]
        .iter()
        .filter(|t| residuals(t).iter().any(|r| *r > 1e-3))
        .count();
    let pls_max = traces[1]
        .iter()
        .flat_map(residuals)
        .fold(0.0f64, f64::max);
    let better = mp < ml;
    let off_ok = ppls_off == SEEDS.len();
    let on_ok = pls_max < 1e-10;
    outcome(
        better && off_ok && on_ok,
        format!(
            "medians PPLS {mp:.5} PLS {ml:.5} [{}]; PPLS runs leaving the line {ppls_off}/10 [{}]; max PLS residual {pls_max:.1e} [{}]\n      PPLS-BO  {}\n      PLS-BO   {}",
            ok(better),
            ok(off_ok),
            ok(on_ok),
            fmt_list(&ppls_final),
            fmt_list(&pls_final)
        ),
    )
}

// ---------------------------------------------------------------- criterion 4

fn cantilever_direction() -> Outcome {
    let b = benchmark(CANTILEVER_PERIODIC).unwrap();
    let target = b.target.unwrap();
    let n_k = 100;
    let mut pass = true;
    let mut detail = format!("target {target}; unreached runs count as {}", n_k + 1);
    for (label, acq) in [
        ("UCB", redspace::acquisition::AcquisitionConfig { kind: redspace::acquisition::AcquisitionKind::Ucb, gamma: GammaSchedule::Adaptive, ..Default::default() }),
        ("EI", redspace::acquisition::AcquisitionConfig::default()),
    ] {
        let configs: Vec<RunConfig> = [(Method::PplsBo, 3), (Method::PlsBo, 3), (Method::Bo, 3)]
            .iter()
            .map(|(m, d)| RunConfig {
                method: *m,
                d_z: *d,
                n_k,
                acquisition: acq.clone(),
                init: InitDesign::Pbd { extra_lhs: 3 },
                stop_below: Some(target),
                ..Default::default()
            })
            .collect();
        let traces = run_all(&b.problem, &configs, &SEEDS);
        let counts: Vec<Vec<f64>> = traces
            .iter()
            .map(|ts| {
                ts.iter()
                    .map(|t| t.iterations_to_target(target).map_or((n_k + 1) as f64, |k| k as f64))
                    .collect()
            })
            .collect();
        let m: Vec<f64> = counts.iter().map(|c| mean(c)).collect();
        let good = m[0] <= m[1] && m[1] < m[2] && m[0] <= 0.5 * m[2];
        pass &= good;
        detail.push_str(&format!(
            "\n      {label}: mean iterations PPLS {:.1} PLS {:.1} BO {:.1} [{}]",
            m[0],
            m[1],
            m[2],
            ok(good)
        ));
        for (name, c) in ["PPLS-BO", "PLS-BO", "BO"].iter().zip(&counts) {
            let list: Vec<String> = c.iter().map(|v| format!("{v}")).collect();
            detail.push_str(&format!("\n        {name:<8} {}", list.join(" ")));
        }
    }
    outcome(pass, detail)
}

// ---------------------------------------------------------------- criterion 5

fn log_joint(model: &PplsModel, y: &DVector<f64>, s: &DVector<f64>, z: f64) -> f64 {
    let mut v = -0.5 * z * z;
    for i in 0..model.d_s() {
        let r = s[i] - model.w[(i, 0)] * z;
        v -= 0.5 * (r * r / model.sigma_s[i] + model.sigma_s[i].ln());
    }
    for i in 0..model.d_y() {
        let r = y[i] - model.q[(i, 0)] * z;
        v -= 0.5 * (r * r / model.sigma_y[i] + model.sigma_y[i].ln());
    }
    v
}

fn em_suite() -> Outcome {
    // (a) monotone evidence
    let mut worst_drop = f64::NEG_INFINITY;
    let mut a_ok = true;
    for case in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let d_s = rng.random_range(2..9);
        let d_y = rng.random_range(1..4);
        let d_z = rng.random_range(1..=d_s.min(3));
        let n = rng.random_range(8..40);
        let noise = rng.random_range(0.01..0.5);
        let data = planted_subspace(n, d_s, d_y, d_z, noise, case).unwrap();
        let (_, report) = em_fit_matrices(&data.s, &data.y, &EmConfig::new(d_z, 60, case), None).unwrap();
        for p in report.elbo_trace.windows(2) {
            worst_drop = worst_drop.max(p[0] - p[1]);
            a_ok &= p[1] >= p[0] - 1e-8;
        }
    }
    // (b) planted subspace recovery
    let mut worst_angle: f64 = 0.0;
    for (seed, d_s, d_y, d_z) in [(1u64, 10, 3, 2), (2, 6, 2, 1), (3, 12, 4, 3)] {
        let data = planted_subspace(200, d_s, d_y, d_z, 0.0, seed).unwrap();
        let (model, _) = em_fit_matrices(&data.s, &data.y, &EmConfig::new(d_z, 500, seed), None).unwrap();
        let qa = model.w.clone().qr().q();
        let qb = data.w.clone().qr().q();
        let angle = (qa.transpose() * qb).singular_values().min().clamp(-1.0, 1.0).acos();
        worst_angle = worst_angle.max(angle);
    }
    let b_ok = worst_angle < 1e-3;
    // (c) 1-D posterior against Simpson quadrature
    let mut worst_quad: f64 = 0.0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = PplsModel::new(
            random_orthonormal(4, 1, &mut rng),
            standard_normal_matrix(2, 1, &mut rng),
            DVector::from_fn(4, |_, _| rng.random_range(0.1..1.0)),
            DVector::from_fn(2, |_, _| rng.random_range(0.1..1.0)),
        )
        .unwrap();
        let (s, y) = model.sample(1, &mut rng);
        let s = s.row(0).transpose();
        let y = y.row(0).transpose();
        let m = 40_000;
        let h = 16.0 / m as f64;
        let logs: Vec<f64> = (0..=m).map(|i| log_joint(&model, &y, &s, -8.0 + i as f64 * h)).collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut z0, mut z1, mut z2) = (0.0, 0.0, 0.0);
        for (i, l) in logs.iter().enumerate() {
            let wgt = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            let z = -8.0 + i as f64 * h;
            let p = wgt * (l - top).exp();
            z0 += p;
            z1 += p * z;
            z2 += p * z * z;
        }
        let mean = z1 / z0;
        let var = z2 / z0 - mean * mean;
        let post = latent_posterior(&model, y.as_slice(), s.as_slice()).unwrap();
        worst_quad = worst_quad.max((post.mu[0] - mean).abs()).max((post.sigma[(0, 0)] - var).abs());
    }
    let c_ok = worst_quad < 1e-6;
    outcome(
        a_ok && b_ok && c_ok,
        format!(
            "(a) largest evidence drop {worst_drop:.1e} [{}] (b) worst angle {worst_angle:.1e} rad [{}] (c) quadrature error {worst_quad:.1e} [{}]",
            ok(a_ok),
            ok(b_ok),
            ok(c_ok)
        ),
    )
}

// ---------------------------------------------------------------- criterion 6

fn random_gp(seed: u64, convention: KernelConvention) -> GpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(1..4);
    let n = rng.random_range(3..15);
    let z = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
    let y = DVector::from_fn(n, |_, _| rng.random_range(-1.5..1.5));
    let theta = Hyperparameters::new(
        rng.random_range(0.3..2.0),
        (0..d).map(|_| rng.random_range(0.2..3.0)).collect(),
        rng.random_range(0.05..0.8),
    )
    .unwrap();
    GpModel::new(z, y, theta, convention).unwrap()
}

fn gp_suite() -> Outcome {
    // noise-free interpolation
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z: DMatrix<f64> = DMatrix::from_fn(12, 2, |_, _| rng.random_range(0.0..3.0));
    let y = DVector::from_fn(12, |i, _| (z[(i, 0)] * 2.0).sin() + z[(i, 1)]);
    let gp = GpModel::new(z.clone(), y.clone(), Hyperparameters::new(1.0, vec![0.5, 0.5], 0.0).unwrap(), KernelConvention::Linear).unwrap();
    let p = gp.predict(&z).unwrap();
    let interp = (&p.mean - &y).amax();
    // prior reversion
    let mut revert: f64 = 0.0;
    for conv in [KernelConvention::Linear, KernelConvention::Squared] {
        let g = random_gp(3, conv);
        let far = DMatrix::from_element(1, g.inputs().ncols(), 1e3);
        let p = g.predict(&far).unwrap();
        revert = revert
            .max(p.mean[0].abs())
            .max((p.variance[0] - g.hyperparameters().sigma_f.powi(2)).abs());
    }
    // gradient
    let h = 1e-5;
    let mut worst_grad: f64 = 0.0;
    for seed in 0..100u64 {
        let conv = if seed % 2 == 0 { KernelConvention::Linear } else { KernelConvention::Squared };
        let g = random_gp(seed, conv);
        let an = DVector::from_vec(g.lml_gradient());
        let p0 = g.hyperparameters().to_log();
        let at = |p: &[f64]| {
            GpModel::new(g.inputs().clone(), g.outputs().clone(), Hyperparameters::from_log(p), conv)
                .unwrap()
                .log_marginal_likelihood()
        };
        let fd = DVector::from_fn(p0.len(), |i, _| {
            let mut a = p0.clone();
            let mut b = p0.clone();
            a[i] += h;
            b[i] -= h;
            (at(&a) - at(&b)) / (2.0 * h)
        });
        worst_grad = worst_grad.max((&an - &fd).norm() / fd.norm().max(1e-8));
    }
    // PSD predictive covariance
    let mut min_eig = f64::INFINITY;
    for seed in 0..20u64 {
        let g = random_gp(seed, KernelConvention::Linear);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 500);
        let zs = DMatrix::from_fn(30, g.inputs().ncols(), |_, _| rng.random_range(-3.0..3.0));
        let (_, cov) = g.predict_full(&zs).unwrap();
        min_eig = min_eig.min(cov.symmetric_eigen().eigenvalues.min());
    }
    let checks = [interp < 1e-6, revert < 1e-6, worst_grad < 1e-4, min_eig > -1e-8];
    outcome(
        checks.iter().all(|c| *c),
        format!(
            "interpolation {interp:.1e} [{}] reversion {revert:.1e} [{}] gradient {worst_grad:.1e} [{}] min eigenvalue {min_eig:.1e} [{}]",
            ok(checks[0]),
            ok(checks[1]),
            ok(checks[2]),
            ok(checks[3])
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

fn marginal_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 10;
    let means = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.5..1.5));
    let gps: Vec<GpModel> = (0..2)
        .map(|j| {
            let y = DVector::from_fn(n, |i, _| (means[(i, 0)] * (1.0 + j as f64)).sin() + 0.5 * means[(i, 1)]);
            let theta = Hyperparameters::new(1.0, vec![0.8, 1.4], 0.05).unwrap();
            GpModel::new(means.clone(), y, theta, KernelConvention::Linear).unwrap()
        })
        .collect();
    let sigma_z = DMatrix::from_row_slice(2, 2, &[0.09, 0.02, 0.02, 0.04]);
    let points = [[0.3, 0.1], [-1.0, 1.0], [1.4, -0.6]];

    let mut collapse: f64 = 0.0;
    for z in &points {
        let est = marginal_predictive_from(&gps, &means, &DMatrix::zeros(2, 2), z, 50, 7).unwrap();
        for (g, e) in gps.iter().zip(&est) {
            let (m, v) = g.predict_point(z);
            collapse = collapse.max((e.mean - m).abs()).max((e.variance - v).abs());
        }
    }
    let predictor = MarginalPredictor::new(&gps, &means, &sigma_z, 1000, 3).unwrap();
    let mut dominance = true;
    for _ in 0..200 {
        let z = [rng.random_range(-2.5..2.5), rng.random_range(-2.5..2.5)];
        dominance &= predictor.predict(&z).iter().all(|e| e.variance >= e.mean_gp_variance);
    }
    let mut worst_z: f64 = 0.0;
    for (i, z) in points.iter().enumerate() {
        let small = marginal_predictive_from(&gps, &means, &sigma_z, z, 1_000, 100 + i as u64).unwrap();
        let big = marginal_predictive_from(&gps, &means, &sigma_z, z, 100_000, 900 + i as u64).unwrap();
        for (s, b) in small.iter().zip(&big) {
            let se = (s.std_error.powi(2) + b.std_error.powi(2)).sqrt();
            worst_z = worst_z.max((s.mean - b.mean).abs() / se);
        }
    }
    let checks = [collapse < 1e-10, dominance, worst_z < 3.0];
    outcome(
        checks.iter().all(|c| *c),
        format!(
            "collapse {collapse:.1e} [{}] variance dominance [{}] largest deviation {worst_z:.2} SE [{}]",
            ok(checks[0]),
            ok(checks[1]),
            ok(checks[2])
        ),
    )
}

// ---------------------------------------------------------------- criterion 8

fn acquisition_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_ei: f64 = 0.0;
    for _ in 0..50 {
        let mu: f64 = rng.random_range(-2.0..2.0);
        let sigma: f64 = rng.random_range(0.05..2.0);
        let best: f64 = rng.random_range(-2.0..2.0);
        let draws = 1_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..draws {
            let e: f64 = rng.sample(StandardNormal);
            let imp = (best - (mu + sigma * e)).max(0.0);
            s1 += imp;
            s2 += imp * imp;
        }
        let nf = draws as f64;
        let m = s1 / nf;
        let se = ((s2 / nf - m * m) / nf).sqrt().max(1e-300);
        worst_ei = worst_ei.max((ei(mu, sigma, best, 0.0) - m).abs() / se);
    }
    let mut gamma_exact = true;
    for k in 0..200 {
        for d_z in 1..6 {
            gamma_exact &= GammaSchedule::Adaptive.gamma(k, d_z) == 0.2 * d_z as f64 * (2.0 * (k as f64 + 1.0)).ln();
        }
    }
    let half = constrained_weight(&[(0.0, 1.3)], &[-1.0]);

    let field = |x: f64, y: f64| {
        (3.0 * x).sin() * (2.0 * y).cos() + 0.4 * (-4.0 * ((x - 0.6).powi(2) + (y + 0.4).powi(2))).exp()
            - 0.05 * (x * x + y * y)
    };
    let m = 1000;
    let mut grid = f64::NEG_INFINITY;
    for i in 0..m {
        for j in 0..m {
            grid = grid.max(field(-2.0 + 4.0 * i as f64 / (m - 1) as f64, -2.0 + 4.0 * j as f64 / (m - 1) as f64));
        }
    }
    let (_, v) = maximize_acquisition(
        |p: &[f64]| field(p[0], p[1]),
        &[-2.0, -2.0],
        &[2.0, 2.0],
        &MaximizerConfig::new(2000, 17),
        &[],
    )
    .unwrap();
    let checks = [worst_ei < 3.0, gamma_exact, half == 0.5, v >= grid - 1e-3];
    outcome(
        checks.iter().all(|c| *c),
        format!(
            "EI deviation {worst_ei:.2} SE [{}] gamma schedule [{}] weight {half} [{}] maximiser {v:.6} vs grid {grid:.6} [{}]",
            ok(checks[0]),
            ok(checks[1]),
            ok(checks[2]),
            ok(checks[3])
        ),
    )
}

// ---------------------------------------------------------------- criterion 9

fn trace_bytes(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let n = p.file_name().unwrap().to_str().unwrap();
            n.starts_with("trace_") && n.ends_with(".csv")
        })
        .map(|p| (p.file_name().unwrap().to_str().unwrap().to_string(), std::fs::read(&p).unwrap()))
        .collect()
}

fn determinism() -> Outcome {
    let config = ExperimentConfig::from_json(
        r#"{"benchmark":"illustrative-constrained","methods":["BO","PCA-BO","PLS-BO","PPLS-BO"],"seeds":[0,1],
            "run":{"n_k":8,"n_l":100,"init":{"kind":"pbd","extra_lhs":3}},"overrides":{"PCA-BO":{"d_z":8}}}"#,
    )
    .unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_experiment(&config, &a, 2, 0).unwrap();
    run_experiment(&config, &b, 1, 0).unwrap();
    let (ta, tb) = (trace_bytes(&a), trace_bytes(&b));
    let identical = ta.len() == 8 && ta == tb;

    let d = illustrative_domain();
    let spec = EvaluatorSpec {
        command: vec![env!("CARGO_BIN_EXE_redspace").into(), "serve".into(), ILLUSTRATIVE.into()],
        lower: d.lower().to_vec(),
        upper: d.upper().to_vec(),
        d_y: 2,
        timeout_s: 30.0,
        name: Some(ILLUSTRATIVE.into()),
    };
    let local_problem = benchmark(ILLUSTRATIVE).unwrap().problem;
    let mut equal = true;
    for method in Method::ALL {
        let cfg = RunConfig {
            d_z: if method == Method::PcaBo { 8 } else { 2 },
            ..config.runs[&method].clone()
        };
        let local = run(&local_problem, &cfg).unwrap();
        let remote = run(&external_evaluator(&spec).unwrap(), &cfg).unwrap();
        equal &= local == remote;
    }
    outcome(
        identical && equal,
        format!("{} trace CSVs byte-identical on rerun [{}]; subprocess traces equal in-process [{}]", ta.len(), ok(identical), ok(equal)),
    )
}

// ---------------------------------------------------------------- driver

type Check = fn() -> Outcome;

fn main() -> ExitCode {
    let criteria: [(usize, &str, f64, Check); 9] = [
        (1, "PBD bases", 5.0, pbd_bases),
        (2, "illustrative convergence", 1800.0, illustrative_convergence),
        (3, "misspecification robustness", f64::INFINITY, misspecification),
        (4, "cantilever direction", 1200.0, cantilever_direction),
        (5, "EM correctness", 60.0, em_suite),
        (6, "GP correctness", 60.0, gp_suite),
        (7, "marginal predictive", 120.0, marginal_suite),
        (8, "acquisition", 120.0, acquisition_suite),
        (9, "end-to-end determinism", f64::INFINITY, determinism),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (n, name, limit, check) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let in_time = secs < limit;
        let pass = result.pass && in_time;
        if !pass {
            failures += 1;
        }
        let budget = if limit.is_finite() {
            format!(" (limit {limit:.0} s{})", if in_time { "" } else { ", exceeded" })
        } else {
            String::new()
        };
        println!(
            "criterion {n} {name}: {} in {secs:.1} s{budget}\n      {}",
            if pass { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    if failures > 0 {
        println!("{failures} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
