//! Acquisition functions, constraint weighting, latent-domain geometry and a
//! box-constrained global maximiser.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::doe::DesignDomain;
use crate::error::{Error, Result};
use crate::linalg::seeded_rng;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcquisitionKind {
    Ucb,
    #[default]
    Ei,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaSchedule {
    Constant(f64),
    Adaptive,
}

impl Default for GammaSchedule {
    fn default() -> Self {
        GammaSchedule::Adaptive
    }
}

impl GammaSchedule {
    /// Exploration weight at adaptive iteration `k` (1-based) in `d_z` dimensions.
    pub fn gamma(&self, k: usize, d_z: usize) -> f64 {
        match self {
            GammaSchedule::Constant(g) => *g,
            GammaSchedule::Adaptive => adaptive_gamma(k, d_z),
        }
    }
}

pub fn adaptive_gamma(k: usize, d_z: usize) -> f64 {
    0.2 * d_z as f64 * (2.0 * (k as f64 + 1.0)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionConfig {
    pub kind: AcquisitionKind,
    pub gamma: GammaSchedule,
    pub xi: f64,
    /// Penalty applied to every constraint's violation probability.
    pub rho: f64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            kind: AcquisitionKind::Ei,
            gamma: GammaSchedule::Adaptive,
            xi: 0.0,
            rho: -1.0,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        if let GammaSchedule::Constant(g) = self.gamma {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::config("acquisition.gamma", "constant gamma must be >= 0"));
            }
        }
        if !(-1.0..=0.0).contains(&self.rho) {
            return Err(Error::config("acquisition.rho", "rho must lie in [-1, 0]"));
        }
        if !self.xi.is_finite() {
            return Err(Error::config("acquisition.xi", "xi must be finite"));
        }
        Ok(())
    }
}

/// Upper confidence bound for minimisation, `−μ + γσ`.
pub fn ucb(mu: f64, sigma: f64, gamma: f64) -> f64 {
    -mu + gamma * sigma
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Expected improvement below `y_best` for minimisation.
pub fn ei(mu: f64, sigma: f64, y_best: f64, xi: f64) -> f64 {
    let imp = y_best - mu - xi;
    if sigma < 1e-12 {
        return imp.max(0.0);
    }
    let u = imp / sigma;
    (imp * std_normal_cdf(u) + sigma * std_normal_pdf(u)).max(0.0)
}

/// `P(f > 0)` for `f ~ N(mu, sigma²)`.
pub fn probability_positive(mu: f64, sigma: f64) -> f64 {
    if sigma < 1e-12 {
        return if mu > 0.0 { 1.0 } else { 0.0 };
    }
    std_normal_cdf(mu / sigma)
}

/// `Π (1 + ρᵢ P(Hᵢ > 0))` from constraint predictions `(mean, std)`.
pub fn constrained_weight(constraints: &[(f64, f64)], rho: &[f64]) -> f64 {
    constraints
        .iter()
        .enumerate()
        .map(|(i, (mu, sd))| {
            let r = if rho.len() == 1 { rho[0] } else { rho[i] };
            1.0 + r * probability_positive(*mu, *sd)
        })
        .product()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LatentBox {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.iter()
            .enumerate()
            .all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
    }
}

/// Smallest axis-aligned box containing `Wᵀ s` for every `s` in `domain`.
///
/// Each latent coordinate is a linear function of `s`, so its extremes over a
/// box are attained coordinate-wise: this equals the min/max over all
/// `2^d_s` projected vertices without enumerating them.
pub fn latent_box(w: &DMatrix<f64>, domain: &DesignDomain) -> Result<LatentBox> {
    if w.nrows() != domain.dim() {
        return Err(Error::dims("basis rows do not match the domain dimension"));
    }
    let (lo, hi) = (domain.lower(), domain.upper());
    let mut lower = vec![0.0; w.ncols()];
    let mut upper = vec![0.0; w.ncols()];
    for j in 0..w.ncols() {
        for i in 0..w.nrows() {
            let a = w[(i, j)] * lo[i];
            let b = w[(i, j)] * hi[i];
            lower[j] += a.min(b);
            upper[j] += a.max(b);
        }
        if upper[j] <= lower[j] {
            // a zero column would give an empty box; widen it symmetrically
            lower[j] -= 1e-9;
            upper[j] += 1e-9;
        }
    }
    Ok(LatentBox { lower, upper })
}

/// `true` iff `W z` lies in `domain` (bounds inclusive).
pub fn indicator(w: &DMatrix<f64>, z_bar: &[f64], domain: &DesignDomain) -> bool {
    let s = w * DVector::from_column_slice(z_bar);
    domain.contains(s.as_slice())
}

/// Latent subspace of a normalised design space: maps latents to raw designs
/// and decides feasibility against the raw domain.
#[derive(Debug, Clone)]
pub struct LatentGeometry {
    w: DMatrix<f64>,
    mean: DVector<f64>,
    scale: DVector<f64>,
    domain: DesignDomain,
    normalized: DesignDomain,
    bounds: LatentBox,
}

impl LatentGeometry {
    /// `w` maps latents to normalised designs `(s − mean) / scale`.
    pub fn new(
        w: DMatrix<f64>,
        mean: &DVector<f64>,
        scale: &DVector<f64>,
        domain: &DesignDomain,
    ) -> Result<Self> {
        let d = domain.dim();
        if w.nrows() != d || mean.len() != d || scale.len() != d {
            return Err(Error::dims("latent geometry dimensions disagree"));
        }
        let lo: Vec<f64> = (0..d).map(|i| (domain.lower()[i] - mean[i]) / scale[i]).collect();
        let hi: Vec<f64> = (0..d).map(|i| (domain.upper()[i] - mean[i]) / scale[i]).collect();
        let normalized = DesignDomain::new(lo, hi)?;
        let bounds = latent_box(&w, &normalized)?;
        Ok(Self {
            w,
            mean: mean.clone(),
            scale: scale.clone(),
            domain: domain.clone(),
            normalized,
            bounds,
        })
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.w
    }
    pub fn bounds(&self) -> &LatentBox {
        &self.bounds
    }
    pub fn normalized_domain(&self) -> &DesignDomain {
        &self.normalized
    }

    /// Raw-unit design `mean + scale ⊙ (W z)`.
    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        self.denormalize(&self.w * DVector::from_column_slice(z))
    }

    pub fn denormalize(&self, s_norm: DVector<f64>) -> Vec<f64> {
        (0..s_norm.len())
            .map(|i| self.mean[i] + self.scale[i] * s_norm[i])
            .collect()
    }

    /// Feasibility of the reconstruction, allowing round-off of `1e-9` of
    /// each range so that box-clipped latents on a face count as inside.
    pub fn indicator(&self, z: &[f64]) -> bool {
        self.violation(z) <= 1e-9
    }

    /// Shrinks `z` towards the origin, whose reconstruction is the data mean,
    /// until the reconstruction lies inside the domain. Latents accepted by
    /// [`Self::indicator`] move by round-off only and stay in the subspace.
    pub fn pull_inside(&self, z: &[f64]) -> Vec<f64> {
        let dir = &self.w * DVector::from_column_slice(z);
        let (lo, hi) = (self.domain.lower(), self.domain.upper());
        let mut t: f64 = 1.0;
        for i in 0..dir.len() {
            let step = self.scale[i] * dir[i];
            let v = self.mean[i] + step;
            if v > hi[i] && step > 0.0 {
                t = t.min((hi[i] - self.mean[i]) / step);
            } else if v < lo[i] && step < 0.0 {
                t = t.min((lo[i] - self.mean[i]) / step);
            }
        }
        if t >= 1.0 {
            return z.to_vec();
        }
        let t = t.max(0.0) * (1.0 - 1e-12);
        z.iter().map(|v| v * t).collect()
    }

    /// Largest bound violation of the reconstruction, relative to each range.
    pub fn violation(&self, z: &[f64]) -> f64 {
        let s = self.reconstruct(z);
        let (lo, hi) = (self.domain.lower(), self.domain.upper());
        s.iter()
            .enumerate()
            .map(|(i, v)| ((lo[i] - v).max(v - hi[i]).max(0.0)) / (hi[i] - lo[i]))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaximizerConfig {
    pub population: usize,
    /// Total objective evaluations.
    pub budget: usize,
    pub seed: u64,
}

impl MaximizerConfig {
    pub fn new(budget: usize, seed: u64) -> Self {
        Self {
            population: 64,
            budget,
            seed,
        }
    }
}

struct Tracker<F> {
    f: F,
    evals: usize,
    best: Option<(Vec<f64>, f64)>,
}

impl<F: FnMut(&[f64]) -> f64> Tracker<F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if !v.is_finite() {
            return f64::NEG_INFINITY;
        }
        if self.best.as_ref().is_none_or(|(_, b)| v > *b) {
            self.best = Some((x.to_vec(), v));
        }
        v
    }
}

/// Seeded genetic search with tournament selection, blend crossover,
/// Gaussian mutation and elitist replacement, followed by a shrinking
/// coordinate search around the best point. Returns the best evaluated point
/// and its value. `seeds` are injected into the initial population.
pub fn maximize_acquisition<F>(
    f: F,
    lower: &[f64],
    upper: &[f64],
    config: &MaximizerConfig,
    seeds: &[Vec<f64>],
) -> Result<(Vec<f64>, f64)>
where
    F: FnMut(&[f64]) -> f64,
{
    let d = lower.len();
    if upper.len() != d || d == 0 {
        return Err(Error::dims("maximiser bounds are inconsistent"));
    }
    if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
        return Err(Error::invalid("maximiser lower bound above upper bound"));
    }
    if config.budget == 0 {
        return Err(Error::invalid("maximiser budget must be >= 1"));
    }
    let range: Vec<f64> = lower.iter().zip(upper).map(|(l, u)| u - l).collect();
    let clip = |x: &mut [f64]| {
        for i in 0..d {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };
    let mut rng = seeded_rng(config.seed);
    let mut t = Tracker {
        f,
        evals: 0,
        best: None,
    };
    let pop_size = config.population.max(4).min(config.budget);
    let ga_budget = (config.budget * 3 / 4).max(pop_size);

    let mut pop: Vec<(Vec<f64>, f64)> = Vec::with_capacity(pop_size);
    for s in seeds.iter().take(pop_size) {
        let mut x = s.clone();
        if x.len() != d {
            return Err(Error::dims("seed point has the wrong dimension"));
        }
        clip(&mut x);
        let v = t.eval(&x);
        pop.push((x, v));
    }
    while pop.len() < pop_size {
        let x: Vec<f64> = (0..d).map(|i| lower[i] + rng.random::<f64>() * range[i]).collect();
        let v = t.eval(&x);
        pop.push((x, v));
    }

    let generations = (ga_budget.saturating_sub(t.evals)) / pop_size;
    for gen in 0..generations {
        let frac = gen as f64 / generations.max(1) as f64;
        let sigma = 0.15 * (1.0 - frac) + 0.01 * frac;
        let mut children = Vec::with_capacity(pop_size);
        for _ in 0..pop_size {
            let a = tournament(&pop, &mut rng);
            let b = tournament(&pop, &mut rng);
            let mut x: Vec<f64> = (0..d)
                .map(|i| {
                    let w: f64 = rng.random_range(-0.25..1.25);
                    let base = pop[a].0[i] + w * (pop[b].0[i] - pop[a].0[i]);
                    if rng.random::<f64>() < 0.5 + 0.5 / d as f64 {
                        let n: f64 = rng.sample(rand_distr::StandardNormal);
                        base + sigma * range[i] * n
                    } else {
                        base
                    }
                })
                .collect();
            clip(&mut x);
            let v = t.eval(&x);
            children.push((x, v));
        }
        pop.extend(children);
        pop.sort_by(|p, q| q.1.total_cmp(&p.1));
        pop.truncate(pop_size);
    }

    // coordinate refinement of the incumbent
    if let Some((mut x, mut fx)) = t.best.clone() {
        let mut step: Vec<f64> = range.iter().map(|r| 0.05 * r).collect();
        'outer: while t.evals < config.budget {
            let mut improved = false;
            for i in 0..d {
                for dir in [1.0, -1.0] {
                    if t.evals >= config.budget {
                        break 'outer;
                    }
                    let mut c = x.clone();
                    c[i] += dir * step[i];
                    clip(&mut c);
                    if c[i] == x[i] {
                        continue;
                    }
                    let v = t.eval(&c);
                    if v > fx {
                        x = c;
                        fx = v;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                for (s, r) in step.iter_mut().zip(&range) {
                    *s *= 0.5;
                    if *s < 1e-9 * r.max(1e-300) {
                        break 'outer;
                    }
                }
            }
        }
    }

    t.best
        .ok_or_else(|| Error::numerical("acquisition was non-finite at every probe"))
}

fn tournament<R: Rng + ?Sized>(pop: &[(Vec<f64>, f64)], rng: &mut R) -> usize {
    let a = rng.random_range(0..pop.len());
    let b = rng.random_range(0..pop.len());
    if pop[a].1 >= pop[b].1 {
        a
    } else {
        b
    }
}
