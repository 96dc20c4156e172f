//! Analytic benchmark problems and a synthetic planted-subspace generator.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::doe::DesignDomain;
use crate::error::{Error, Result};
use crate::linalg::{random_orthonormal, seeded_rng, standard_normal_matrix};
use crate::problem::Problem;

pub const ILLUSTRATIVE: &str = "illustrative-constrained";
pub const CANTILEVER_STEP: &str = "cantilever-step-unconstrained";
pub const CANTILEVER_PERIODIC: &str = "cantilever-periodic-unconstrained";

pub fn illustrative_domain() -> DesignDomain {
    DesignDomain::uniform(20, 0.0, 1.0).expect("valid bounds")
}

pub fn cantilever_domain() -> DesignDomain {
    DesignDomain::new(
        vec![100.0, 100.0, 20.0, 20.0, 20.0],
        vec![200.0, 200.0, 70.0, 70.0, 70.0],
    )
    .expect("valid bounds")
}

fn tail_sum(s: &[f64]) -> f64 {
    s[2..].iter().sum::<f64>() / 1000.0
}

fn illustrative_j(s: &[f64]) -> f64 {
    let (a, b) = (s[0], s[1]);
    (6.0 * a * a + 3.0) * (9.0 * a * a + 1.0).sin() * (6.0 * b * b + 2.0).cos() / 9.0 + tail_sum(s)
}

fn illustrative_h(s: &[f64]) -> f64 {
    0.75 - s[0] - s[1] - tail_sum(s)
}

/// Multi-modal 20-variable objective with intrinsic dimension two.
pub fn illustrative_objective(s: &[f64]) -> Result<f64> {
    illustrative_domain().check(s)?;
    Ok(illustrative_j(s))
}

/// Linear constraint of the illustrative problem, feasible iff `≤ 0`.
pub fn illustrative_constraint(s: &[f64]) -> Result<f64> {
    illustrative_domain().check(s)?;
    Ok(illustrative_h(s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CantileverVariant {
    Step,
    Periodic,
}

/// Logistic switch `1 / (1 + e^{−100 x})`.
pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-100.0 * x).exp())
}

fn volume_term(s: &[f64]) -> f64 {
    0.000108 * (s[0] * s[2] + s[1] * s[3] + s[4] * (500.0 - s[0] - s[1]))
}

fn step_term(x: f64) -> f64 {
    x * (0.0963 - 0.0450 * logistic(x - 30.0) + 0.0662 * logistic(x - 40.0) + 0.0313 * logistic(x - 50.0))
}

fn periodic_term(x: f64) -> f64 {
    let c = (0.15 * x).cos();
    0.0513 * x + 1.38 * c * c
}

fn cantilever_j(s: &[f64], variant: CantileverVariant) -> f64 {
    let extra: f64 = s[2..5]
        .iter()
        .map(|x| match variant {
            CantileverVariant::Step => step_term(*x),
            CantileverVariant::Periodic => periodic_term(*x),
        })
        .sum();
    volume_term(s) + extra
}

/// Cost of the five-variable beam: volume term plus a step or periodic
/// contribution from each depth.
pub fn cantilever_objective(s: &[f64], variant: CantileverVariant) -> Result<f64> {
    cantilever_domain().check(s)?;
    Ok(cantilever_j(s, variant))
}

#[derive(Debug, Clone)]
pub struct BenchmarkSpec {
    pub name: &'static str,
    pub problem: Problem,
    pub reported_optimum: Option<f64>,
    pub reported_optimiser: Option<Vec<f64>>,
    /// Threshold for iterations-to-target statistics.
    pub target: Option<f64>,
    /// Constraint of the original problem that is not modelled here.
    pub constraint_omitted: Option<&'static str>,
}

fn problem_from<F>(name: &'static str, domain: DesignDomain, d_y: usize, f: F) -> Problem
where
    F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
{
    Problem::new(name, domain, d_y, Arc::new(f)).expect("d_y >= 1")
}

pub fn benchmark_registry() -> Vec<BenchmarkSpec> {
    vec![
        BenchmarkSpec {
            name: ILLUSTRATIVE,
            problem: problem_from(ILLUSTRATIVE, illustrative_domain(), 2, |s| {
                vec![illustrative_j(s), illustrative_h(s)]
            }),
            reported_optimum: Some(-0.817),
            reported_optimiser: Some({
                let mut s = vec![0.0; 20];
                s[0] = 0.642;
                s[1] = 0.858;
                s
            }),
            target: None,
            constraint_omitted: None,
        },
        BenchmarkSpec {
            name: CANTILEVER_STEP,
            problem: problem_from(CANTILEVER_STEP, cantilever_domain(), 1, |s| {
                vec![cantilever_j(s, CantileverVariant::Step)]
            }),
            reported_optimum: Some(6.8),
            reported_optimiser: Some(vec![129.0, 200.0, 32.0, 32.1, 32.8]),
            target: Some(7.18),
            constraint_omitted: Some("FE displacement"),
        },
        BenchmarkSpec {
            name: CANTILEVER_PERIODIC,
            problem: problem_from(CANTILEVER_PERIODIC, cantilever_domain(), 1, |s| {
                vec![cantilever_j(s, CantileverVariant::Periodic)]
            }),
            reported_optimum: Some(6.6),
            reported_optimiser: Some(vec![133.0, 166.0, 31.6, 32.3, 29.6]),
            target: Some(7.44),
            constraint_omitted: Some("FE displacement"),
        },
    ]
}

pub fn benchmark(name: &str) -> Result<BenchmarkSpec> {
    benchmark_registry()
        .into_iter()
        .find(|b| b.name == name)
        .ok_or_else(|| Error::invalid(format!("unknown benchmark `{name}`")))
}

/// Synthetic data drawn from a planted linear subspace.
#[derive(Debug, Clone)]
pub struct PlantedSubspace {
    pub s: DMatrix<f64>,
    pub y: DMatrix<f64>,
    /// True orthonormal input loading, d_s × d_z.
    pub w: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

/// `s = W z + noise·e_s`, `y = Q z + noise·e_y` with `z ~ N(0, I)`.
pub fn planted_subspace(
    n: usize,
    d_s: usize,
    d_y: usize,
    d_z: usize,
    noise: f64,
    seed: u64,
) -> Result<PlantedSubspace> {
    if d_z == 0 || d_z > d_s || n == 0 || d_y == 0 {
        return Err(Error::invalid("planted subspace needs 1 <= d_z <= d_s and n, d_y >= 1"));
    }
    let mut rng = seeded_rng(seed);
    let w = random_orthonormal(d_s, d_z, &mut rng);
    let q = standard_normal_matrix(d_y, d_z, &mut rng);
    let z = standard_normal_matrix(n, d_z, &mut rng);
    let es = standard_normal_matrix(n, d_s, &mut rng);
    let ey = standard_normal_matrix(n, d_y, &mut rng);
    let s = &z * w.transpose() + es * noise;
    let y = &z * q.transpose() + ey * noise;
    Ok(PlantedSubspace { s, y, w, q })
}
