//! Exact Gaussian-process regression with a squared-exponential ARD kernel.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, derive_seed, seeded_rng};

/// Smallest admissible noise scale σ_y.
pub const NOISE_FLOOR: f64 = 1e-6;
/// Bound on every log-hyperparameter during training.
pub const LOG_BOUND: f64 = 10.0;
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// How the lengthscale enters the exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelConvention {
    /// `exp(−Σ (zᵢ − z'ᵢ)² / (2ℓᵢ))`
    #[default]
    Linear,
    /// `exp(−Σ (zᵢ − z'ᵢ)² / (2ℓᵢ²))`
    Squared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub sigma_f: f64,
    pub lengthscales: Vec<f64>,
    pub sigma_y: f64,
}

impl Hyperparameters {
    pub fn new(sigma_f: f64, lengthscales: Vec<f64>, sigma_y: f64) -> Result<Self> {
        if !(sigma_f > 0.0 && sigma_f.is_finite()) {
            return Err(Error::invalid("sigma_f must be positive"));
        }
        if lengthscales.is_empty() || lengthscales.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::invalid("lengthscales must be positive"));
        }
        if !(sigma_y >= 0.0 && sigma_y.is_finite()) {
            return Err(Error::invalid("sigma_y must be non-negative"));
        }
        Ok(Self {
            sigma_f,
            lengthscales,
            sigma_y: sigma_y.max(NOISE_FLOOR),
        })
    }

    /// Unit signal, unit lengthscales and small noise.
    pub fn default_for(dim: usize) -> Self {
        Self {
            sigma_f: 1.0,
            lengthscales: vec![1.0; dim],
            sigma_y: 0.1,
        }
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// `[ln σ_f, ln ℓ₁, …, ln ℓ_d, ln σ_y]`
    pub fn to_log(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim() + 2);
        v.push(self.sigma_f.ln());
        v.extend(self.lengthscales.iter().map(|l| l.ln()));
        v.push(self.sigma_y.ln());
        v
    }

    pub fn from_log(p: &[f64]) -> Self {
        let d = p.len() - 2;
        Self {
            sigma_f: p[0].exp(),
            lengthscales: p[1..=d].iter().map(|v| v.exp()).collect(),
            sigma_y: p[d + 1].exp().max(NOISE_FLOOR),
        }
    }
}

/// Squared-exponential ARD covariance.
pub fn kernel(z: &[f64], z_prime: &[f64], theta: &Hyperparameters, convention: KernelConvention) -> f64 {
    debug_assert_eq!(z.len(), z_prime.len());
    let mut e = 0.0;
    for i in 0..z.len() {
        let r = z[i] - z_prime[i];
        e += r * r / denominator(theta.lengthscales[i], convention);
    }
    theta.sigma_f * theta.sigma_f * (-0.5 * e).exp()
}

#[inline]
fn denominator(l: f64, convention: KernelConvention) -> f64 {
    match convention {
        KernelConvention::Linear => l,
        KernelConvention::Squared => l * l,
    }
}

/// Marginal predictive moments at a batch of test inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrediction {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
}

/// A GP conditioned on training data with fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct GpModel {
    z: DMatrix<f64>,
    y: DVector<f64>,
    theta: Hyperparameters,
    convention: KernelConvention,
    inv_denom: Vec<f64>,
    l: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
    /// Set when training could not improve on the fallback hyperparameters.
    pub warning: bool,
}

impl GpModel {
    pub fn new(
        z: DMatrix<f64>,
        y: DVector<f64>,
        theta: Hyperparameters,
        convention: KernelConvention,
    ) -> Result<Self> {
        if z.nrows() != y.len() {
            return Err(Error::dims(format!("{} inputs for {} outputs", z.nrows(), y.len())));
        }
        if z.ncols() != theta.dim() {
            return Err(Error::dims(format!(
                "inputs have {} columns, kernel has {} lengthscales",
                z.ncols(),
                theta.dim()
            )));
        }
        if z.nrows() == 0 {
            return Err(Error::invalid("GP needs at least one training point"));
        }
        let inv_denom: Vec<f64> = theta
            .lengthscales
            .iter()
            .map(|l| 1.0 / denominator(*l, convention))
            .collect();
        let k = covariance(&z, &theta, &inv_denom, true);
        let (chol, jitter) = cholesky_jittered(&k, JITTER_START, JITTER_MAX)?;
        let alpha = chol.solve(&y);
        Ok(Self {
            z,
            y,
            theta,
            convention,
            inv_denom,
            l: chol.unpack(),
            alpha,
            jitter,
            warning: false,
        })
    }

    /// Same hyperparameters conditioned on different training inputs.
    pub fn with_inputs(&self, z: DMatrix<f64>) -> Result<Self> {
        Self::new(z, self.y.clone(), self.theta.clone(), self.convention)
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.theta
    }
    pub fn convention(&self) -> KernelConvention {
        self.convention
    }
    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.z
    }
    pub fn outputs(&self) -> &DVector<f64> {
        &self.y
    }
    pub fn n(&self) -> usize {
        self.z.nrows()
    }
    /// Lower Cholesky factor of `C_ZZ + σ_y² I` (plus any jitter).
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.l
    }
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn cross(&self, z: &[f64], out: &mut DVector<f64>) {
        let sf2 = self.theta.sigma_f * self.theta.sigma_f;
        for a in 0..self.n() {
            let mut e = 0.0;
            for (i, zi) in z.iter().enumerate() {
                let r = zi - self.z[(a, i)];
                e += r * r * self.inv_denom[i];
            }
            out[a] = sf2 * (-0.5 * e).exp();
        }
    }

    /// Mean and variance of the latent function at one input.
    pub fn predict_point(&self, z: &[f64]) -> (f64, f64) {
        let mut k = DVector::zeros(self.n());
        self.cross(z, &mut k);
        let mean = k.dot(&self.alpha);
        self.l.solve_lower_triangular_mut(&mut k);
        let var = self.theta.sigma_f * self.theta.sigma_f - k.norm_squared();
        (mean, var.max(0.0))
    }

    pub fn predict(&self, z_star: &DMatrix<f64>) -> Result<GaussianPrediction> {
        self.check_test(z_star)?;
        let m = z_star.nrows();
        let mut mean = DVector::zeros(m);
        let mut variance = DVector::zeros(m);
        let mut row = vec![0.0; z_star.ncols()];
        for i in 0..m {
            for (j, r) in row.iter_mut().enumerate() {
                *r = z_star[(i, j)];
            }
            let (mu, var) = self.predict_point(&row);
            mean[i] = mu;
            variance[i] = var;
        }
        Ok(GaussianPrediction { mean, variance })
    }

    /// Predictive mean and full covariance of the latent function.
    pub fn predict_full(&self, z_star: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check_test(z_star)?;
        let m = z_star.nrows();
        let mut kx = DMatrix::zeros(self.n(), m);
        let mut col = DVector::zeros(self.n());
        let mut row = vec![0.0; z_star.ncols()];
        for i in 0..m {
            for (j, r) in row.iter_mut().enumerate() {
                *r = z_star[(i, j)];
            }
            self.cross(&row, &mut col);
            kx.set_column(i, &col);
        }
        let mean = kx.tr_mul(&self.alpha);
        let v = self
            .l
            .solve_lower_triangular(&kx)
            .ok_or_else(|| Error::numerical("singular GP factor"))?;
        let kss = covariance(z_star, &self.theta, &self.inv_denom, false);
        let mut cov = kss - v.tr_mul(&v);
        cov = (&cov + cov.transpose()) * 0.5;
        Ok((mean, cov))
    }

    fn check_test(&self, z_star: &DMatrix<f64>) -> Result<()> {
        if z_star.ncols() != self.z.ncols() {
            return Err(Error::dims("test inputs have the wrong dimension"));
        }
        Ok(())
    }

    /// `ln N(y; 0, C_ZZ + σ_y² I)`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.n() as f64;
        let ln_det = 2.0 * self.l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        -0.5 * self.y.dot(&self.alpha) - 0.5 * ln_det - 0.5 * n * LN_2PI
    }

    /// Gradient of [`Self::log_marginal_likelihood`] with respect to
    /// `[ln σ_f, ln ℓ₁, …, ln ℓ_d, ln σ_y]`.
    pub fn lml_gradient(&self) -> Vec<f64> {
        let n = self.n();
        let d = self.z.ncols();
        let l_inv = self
            .l
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .unwrap_or_else(|| DMatrix::zeros(n, n));
        let k_inv = l_inv.tr_mul(&l_inv);
        let sf2 = self.theta.sigma_f * self.theta.sigma_f;
        let mut grad = vec![0.0; d + 2];
        let mut diag = 0.0;
        for a in 0..n {
            let wa = self.alpha[a] * self.alpha[a] - k_inv[(a, a)];
            diag += wa;
            grad[0] += wa * sf2;
            for b in 0..a {
                let w = self.alpha[a] * self.alpha[b] - k_inv[(a, b)];
                let mut e = 0.0;
                for i in 0..d {
                    let r = self.z[(a, i)] - self.z[(b, i)];
                    e += r * r * self.inv_denom[i];
                }
                let kf = sf2 * (-0.5 * e).exp();
                let wk = w * kf;
                // off-diagonal pairs count twice, the ½ cancels one of them
                grad[0] += 2.0 * wk;
                for i in 0..d {
                    let r = self.z[(a, i)] - self.z[(b, i)];
                    let dr = match self.convention {
                        KernelConvention::Linear => 0.5 * r * r * self.inv_denom[i],
                        KernelConvention::Squared => r * r * self.inv_denom[i],
                    };
                    grad[1 + i] += wk * dr;
                }
            }
        }
        grad[d + 1] = self.theta.sigma_y * self.theta.sigma_y * diag;
        grad
    }
}

fn covariance(
    z: &DMatrix<f64>,
    theta: &Hyperparameters,
    inv_denom: &[f64],
    with_noise: bool,
) -> DMatrix<f64> {
    let n = z.nrows();
    let sf2 = theta.sigma_f * theta.sigma_f;
    let mut k = DMatrix::zeros(n, n);
    for a in 0..n {
        k[(a, a)] = sf2;
        for b in 0..a {
            let mut e = 0.0;
            for i in 0..z.ncols() {
                let r = z[(a, i)] - z[(b, i)];
                e += r * r * inv_denom[i];
            }
            let v = sf2 * (-0.5 * e).exp();
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    if with_noise {
        let s2 = theta.sigma_y * theta.sigma_y;
        for a in 0..n {
            k[(a, a)] += s2;
        }
    }
    k
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpFitConfig {
    /// Number of local ascents; the first starts from `init` when given.
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub convention: KernelConvention,
    pub init: Option<Hyperparameters>,
}

impl Default for GpFitConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            seed: 0,
            max_iter: 200,
            convention: KernelConvention::Linear,
            init: None,
        }
    }
}

/// Negative log marginal likelihood and its gradient in log space, or `None`
/// when the covariance cannot be factorised.
fn objective(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    p: &[f64],
    convention: KernelConvention,
) -> Option<(f64, Vec<f64>)> {
    let theta = Hyperparameters::from_log(p);
    let gp = GpModel::new(z.clone(), y.clone(), theta, convention).ok()?;
    let f = -gp.log_marginal_likelihood();
    let g: Vec<f64> = gp.lml_gradient().into_iter().map(|v| -v).collect();
    if f.is_finite() && g.iter().all(|v| v.is_finite()) {
        Some((f, g))
    } else {
        None
    }
}

fn project(p: &mut [f64]) {
    for v in p.iter_mut() {
        *v = v.clamp(-LOG_BOUND, LOG_BOUND);
    }
}

/// Bounded L-BFGS with Armijo backtracking on the projected path.
fn minimize(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    start: Vec<f64>,
    max_iter: usize,
    convention: KernelConvention,
) -> Option<(f64, Vec<f64>)> {
    const MEMORY: usize = 8;
    let mut x = start;
    project(&mut x);
    let (mut f, mut g) = objective(z, y, &x, convention)?;
    let mut hist: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
    for _ in 0..max_iter {
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, yv, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(yv) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, yv, _)) = hist.last() {
            let gamma = dot(s, yv) / dot(yv, yv);
            for qi in q.iter_mut() {
                *qi *= gamma;
            }
        }
        for ((s, yv, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(yv, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        // coordinates pinned at a bound with the gradient pushing outwards stay put
        for i in 0..x.len() {
            let at_lo = x[i] <= -LOG_BOUND && g[i] > 0.0;
            let at_hi = x[i] >= LOG_BOUND && g[i] < 0.0;
            if at_lo || at_hi {
                dir[i] = 0.0;
            }
        }
        if dot(&dir, &g) >= 0.0 {
            hist.clear();
            dir = g.iter().map(|v| -v).collect();
        }
        let mut step = if hist.is_empty() {
            (1.0 / dot(&g, &g).sqrt()).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..40 {
            let mut cand: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            project(&mut cand);
            let moved: Vec<f64> = cand.iter().zip(&x).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &moved);
            if decrease < 0.0 {
                if let Some((fc, gc)) = objective(z, y, &cand, convention) {
                    if fc <= f + 1e-4 * decrease {
                        accepted = Some((cand, fc, gc));
                        break;
                    }
                }
            } else if moved.iter().all(|v| *v == 0.0) {
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else {
            break;
        };
        let s: Vec<f64> = cand.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 {
            hist.push((s, yv, 1.0 / sy));
            if hist.len() > MEMORY {
                hist.remove(0);
            }
        }
        let gain = f - fc;
        x = cand;
        f = fc;
        g = gc;
        let pg: f64 = x
            .iter()
            .zip(&g)
            .map(|(xi, gi)| {
                let moved = (xi - gi).clamp(-LOG_BOUND, LOG_BOUND);
                (moved - xi).abs()
            })
            .fold(0.0, f64::max);
        if pg < 1e-6 || gain < 1e-10 * f.abs().max(1.0) {
            break;
        }
    }
    Some((f, x))
}

fn random_start<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    let mut p = Vec::with_capacity(dim + 2);
    p.push(rng.random_range(-1.0..1.0));
    for _ in 0..dim {
        p.push(rng.random_range(-2.0..2.0));
    }
    p.push(rng.random_range(-7.0..-1.0));
    p
}

/// Fits hyperparameters by multi-start maximisation of the log marginal
/// likelihood. Restart `r` starts from a point drawn with its own derived
/// seed, so adding restarts never changes the earlier ones.
pub fn gp_fit(z: &DMatrix<f64>, y: &DVector<f64>, config: &GpFitConfig) -> Result<GpModel> {
    if z.nrows() < 2 || z.nrows() != y.len() {
        return Err(Error::invalid(format!(
            "gp_fit needs n >= 2 matching rows, got {} inputs and {} outputs",
            z.nrows(),
            y.len()
        )));
    }
    let dim = z.ncols();
    let restarts = config.restarts.max(1);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for r in 0..restarts {
        let start = match (&config.init, r) {
            (Some(h), 0) => h.to_log(),
            (None, 0) => Hyperparameters::default_for(dim).to_log(),
            _ => random_start(dim, &mut seeded_rng(derive_seed(config.seed, 0x6770, r as u64))),
        };
        if let Some((f, p)) = minimize(z, y, start, config.max_iter, config.convention) {
            if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                best = Some((f, p));
            }
        }
    }
    match best {
        Some((_, p)) => GpModel::new(z.clone(), y.clone(), Hyperparameters::from_log(&p), config.convention),
        None => {
            let theta = config.init.clone().unwrap_or_else(|| Hyperparameters::default_for(dim));
            let mut gp = GpModel::new(z.clone(), y.clone(), theta, config.convention)?;
            gp.warning = true;
            Ok(gp)
        }
    }
}
