//! Adaptive-sampling loops: classical BO and BO over PCA, PLS and PPLS
//! subspaces, plus the Monte-Carlo marginal predictive used by PPLS-BO.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    constrained_weight, ei, maximize_acquisition, ucb, AcquisitionConfig, AcquisitionKind,
    LatentGeometry, MaximizerConfig,
};
use crate::doe::{latin_hypercube, normalize, plackett_burman, Dataset, DesignDomain};
use crate::error::{Error, Result};
use crate::gp::{gp_fit, GpFitConfig, GpModel, Hyperparameters, KernelConvention};
use crate::linalg::{derive_seed, psd_factor, seeded_rng, standard_normal_matrix, standard_normal_vector};
use crate::ppls::{conditional_design_density, em_fit, latent_posteriors, EmConfig, PplsModel};
use crate::problem::{is_feasible, Problem};
use crate::reduction::{nipals_fit, pca_fit};

const STREAM_INIT: u64 = 1;
const STREAM_GP: u64 = 2;
const STREAM_MAXIMIZER: u64 = 3;
const STREAM_MC: u64 = 4;
const STREAM_SAMPLE: u64 = 5;
const STREAM_EM: u64 = 6;
const STREAM_PROBE: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "BO")]
    Bo,
    #[serde(rename = "PCA-BO")]
    PcaBo,
    #[serde(rename = "PLS-BO")]
    PlsBo,
    #[serde(rename = "PPLS-BO")]
    PplsBo,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Bo, Method::PcaBo, Method::PlsBo, Method::PplsBo];

    pub fn label(&self) -> &'static str {
        match self {
            Method::Bo => "BO",
            Method::PcaBo => "PCA-BO",
            Method::PlsBo => "PLS-BO",
            Method::PplsBo => "PPLS-BO",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.label().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Initial design of experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitDesign {
    /// Plackett–Burman design plus `extra_lhs` Latin-hypercube points.
    Pbd {
        #[serde(default)]
        extra_lhs: usize,
    },
    Lhs {
        n: usize,
    },
}

impl Default for InitDesign {
    fn default() -> Self {
        InitDesign::Pbd { extra_lhs: 0 }
    }
}

/// Evaluates the initial design for `seed`; only the LHS part depends on it.
pub fn initial_design(domain: &DesignDomain, init: &InitDesign, seed: u64) -> Result<DMatrix<f64>> {
    let lhs_seed = derive_seed(seed, STREAM_INIT, 0);
    match init {
        InitDesign::Pbd { extra_lhs } => {
            let pb = plackett_burman(domain)?;
            if *extra_lhs == 0 {
                return Ok(pb);
            }
            let lhs = latin_hypercube(*extra_lhs, domain, lhs_seed)?;
            let mut out = DMatrix::zeros(pb.nrows() + lhs.nrows(), domain.dim());
            out.rows_mut(0, pb.nrows()).copy_from(&pb);
            out.rows_mut(pb.nrows(), lhs.nrows()).copy_from(&lhs);
            Ok(out)
        }
        InitDesign::Lhs { n } => latin_hypercube(*n, domain, lhs_seed),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub method: Method,
    pub d_z: usize,
    /// Adaptive iterations.
    pub n_k: usize,
    /// EM sweeps per iteration (PPLS-BO).
    pub n_t: usize,
    /// Monte-Carlo draws of the marginal predictive (PPLS-BO).
    pub n_l: usize,
    pub acquisition: AcquisitionConfig,
    pub seed: u64,
    pub init: InitDesign,
    /// Local ascents per GP fit; the first restarts from the previous
    /// iteration's hyperparameters when `warm_start` is on.
    pub gp_restarts: usize,
    /// Acquisition evaluations per iteration.
    pub maximizer_budget: usize,
    pub kernel_convention: KernelConvention,
    /// Warm-start EM and GP training from the previous iteration.
    pub warm_start: bool,
    /// Stop as soon as a feasible objective below this value is observed.
    pub stop_below: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::PplsBo,
            d_z: 2,
            n_k: 100,
            n_t: 100,
            n_l: 1000,
            acquisition: AcquisitionConfig::default(),
            seed: 0,
            init: InitDesign::default(),
            gp_restarts: 2,
            maximizer_budget: 500,
            kernel_convention: KernelConvention::Linear,
            warm_start: true,
            stop_below: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self, d_s: usize) -> Result<()> {
        if self.method != Method::Bo && (self.d_z == 0 || self.d_z > d_s) {
            return Err(Error::config(
                "d_z",
                format!("d_z = {} must satisfy 1 <= d_z <= d_s = {d_s}", self.d_z),
            ));
        }
        if self.method == Method::PplsBo && self.n_l < 2 {
            return Err(Error::config("n_l", "PPLS-BO needs n_l >= 2"));
        }
        if self.maximizer_budget == 0 {
            return Err(Error::config("maximizer_budget", "must be >= 1"));
        }
        if self.gp_restarts == 0 {
            return Err(Error::config("gp_restarts", "must be >= 1"));
        }
        if let InitDesign::Lhs { n } = self.init {
            if n < 2 {
                return Err(Error::config("init.n", "need at least 2 initial points"));
            }
        }
        if let Some(t) = self.stop_below {
            if !t.is_finite() {
                return Err(Error::config("stop_below", "must be finite"));
            }
        }
        self.acquisition.validate()
    }

    fn seed(&self, stream: u64, index: u64) -> u64 {
        derive_seed(self.seed, stream, index)
    }
}

/// One evaluated design. `k = 0` marks the initial design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub s: Vec<f64>,
    pub y: Vec<f64>,
    pub feasible: bool,
    /// Best feasible objective so far, `None` until a feasible point is seen.
    pub incumbent: Option<f64>,
}

/// Fitted-model summary of one adaptive iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationDigest {
    pub k: usize,
    pub elbo: Option<f64>,
    pub em_iterations: Option<usize>,
    pub gp: Vec<Hyperparameters>,
    /// Row-major d_s × d_z basis mapping latents to normalised designs.
    pub basis: Option<Vec<f64>>,
    pub mean_s: Vec<f64>,
    pub scale_s: Vec<f64>,
    pub latent: Option<Vec<f64>>,
    pub acquisition: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub problem: String,
    pub method: Method,
    pub seed: u64,
    pub d_s: usize,
    pub d_y: usize,
    pub d_z: Option<usize>,
    pub n_init: usize,
    pub rows: Vec<TraceRow>,
    pub digests: Vec<IterationDigest>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestPoint {
    pub value: f64,
    pub s: Vec<f64>,
    pub k: usize,
    pub feasible: bool,
}

impl Trace {
    fn push(&mut self, k: usize, s: Vec<f64>, y: Vec<f64>) {
        let feasible = is_feasible(&y);
        let prev = self.rows.last().and_then(|r| r.incumbent);
        let incumbent = match (prev, feasible) {
            (Some(p), true) => Some(p.min(y[0])),
            (None, true) => Some(y[0]),
            (p, false) => p,
        };
        self.rows.push(TraceRow {
            k,
            s,
            y,
            feasible,
            incumbent,
        });
    }

    /// Incumbent after the last row.
    pub fn final_incumbent(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.incumbent)
    }

    pub fn best_feasible(&self) -> Result<BestPoint> {
        best_feasible(&self.rows)
    }

    pub fn iterations_to_target(&self, target: f64) -> Option<usize> {
        iterations_to_target(&self.rows, target)
    }

    /// Design matrix and outputs of all rows.
    pub fn data(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.rows.len();
        let s = DMatrix::from_fn(n, self.d_s, |i, j| self.rows[i].s[j]);
        let y = DMatrix::from_fn(n, self.d_y, |i, j| self.rows[i].y[j]);
        (s, y)
    }
}

/// Lowest objective among feasible rows; falls back to the lowest objective
/// overall (flagged infeasible) when no row is feasible.
pub fn best_feasible(rows: &[TraceRow]) -> Result<BestPoint> {
    if rows.is_empty() {
        return Err(Error::invalid("empty trace"));
    }
    let pick = |feasible_only: bool| {
        rows.iter()
            .filter(|r| !feasible_only || r.feasible)
            .min_by(|a, b| a.y[0].total_cmp(&b.y[0]))
    };
    let (row, feasible) = match pick(true) {
        Some(r) => (r, true),
        None => (pick(false).expect("non-empty"), false),
    };
    Ok(BestPoint {
        value: row.y[0],
        s: row.s.clone(),
        k: row.k,
        feasible,
    })
}

/// Smallest `k` at which a feasible objective below `target` was observed
/// (0 when the initial design already reaches it).
pub fn iterations_to_target(rows: &[TraceRow], target: f64) -> Option<usize> {
    rows.iter()
        .filter(|r| r.feasible && r.y[0] < target)
        .map(|r| r.k)
        .min()
}

/// A run that stopped on an error, with everything evaluated before it.
#[derive(Debug)]
pub struct RunError {
    pub trace: Trace,
    pub error: Error,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} run (seed {}) failed after {} evaluations: {}",
            self.trace.method,
            self.trace.seed,
            self.trace.rows.len(),
            self.error
        )
    }
}

impl std::error::Error for RunError {}

/// Per-output GP predictive moments `(mean, std)` in normalised units.
pub trait Surrogate {
    fn predict_into(&self, z: &[f64], out: &mut [(f64, f64)]);
    fn outputs(&self) -> usize;
}

impl Surrogate for Vec<GpModel> {
    fn predict_into(&self, z: &[f64], out: &mut [(f64, f64)]) {
        for (gp, o) in self.iter().zip(out.iter_mut()) {
            let (m, v) = gp.predict_point(z);
            *o = (m, v.sqrt());
        }
    }
    fn outputs(&self) -> usize {
        self.len()
    }
}

/// Moments of the latent-marginalised predictive for one output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalEstimate {
    pub mean: f64,
    /// `var(μ⁽ˡ⁾) + mean(σ⁽ˡ⁾²)`
    pub variance: f64,
    /// `mean(σ⁽ˡ⁾²)`
    pub mean_gp_variance: f64,
    /// Monte-Carlo standard error of `mean`.
    pub std_error: f64,
}

impl MarginalEstimate {
    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }
}

#[derive(Default)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
    var_sum: f64,
}

impl Moments {
    fn add(&mut self, mu: f64, var: f64) {
        self.n += 1;
        let d = mu - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (mu - self.mean);
        self.var_sum += var;
    }

    fn finish(&self) -> MarginalEstimate {
        let n = self.n as f64;
        let between = if self.n > 1 { self.m2 / (n - 1.0) } else { 0.0 };
        let within = self.var_sum / n;
        MarginalEstimate {
            mean: self.mean,
            variance: between + within,
            mean_gp_variance: within,
            std_error: (between / n).sqrt(),
        }
    }
}

/// GP predictive averaged over random training and test latents, with the
/// latent draws frozen at construction so that it is a deterministic function
/// of the test latent.
pub struct MarginalPredictor {
    draws: Vec<Vec<GpModel>>,
    star_offsets: Vec<DVector<f64>>,
}

struct LatentDraws {
    means: DMatrix<f64>,
    factor: DMatrix<f64>,
    rng: crate::linalg::Rng64,
}

impl LatentDraws {
    fn new(means: &DMatrix<f64>, sigma_z: &DMatrix<f64>, seed: u64) -> Result<Self> {
        if sigma_z.shape() != (means.ncols(), means.ncols()) {
            return Err(Error::dims("latent covariance does not match the latent means"));
        }
        Ok(Self {
            means: means.clone(),
            factor: psd_factor(sigma_z),
            rng: seeded_rng(seed),
        })
    }

    /// Training latents `M + E Lᵀ` and the test offset `L ε`.
    fn next(&mut self) -> (DMatrix<f64>, DVector<f64>) {
        let (n, d) = self.means.shape();
        let e = standard_normal_matrix(n, d, &mut self.rng);
        let eps = standard_normal_vector(d, &mut self.rng);
        (&self.means + e * self.factor.transpose(), &self.factor * eps)
    }
}

impl MarginalPredictor {
    /// `gps` are trained on the posterior-mean latents `means`; their
    /// hyperparameters are reused for every draw.
    pub fn new(
        gps: &[GpModel],
        means: &DMatrix<f64>,
        sigma_z: &DMatrix<f64>,
        n_l: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_l < 2 {
            return Err(Error::invalid("marginal predictive needs n_l >= 2"));
        }
        let mut src = LatentDraws::new(means, sigma_z, seed)?;
        let mut draws = Vec::with_capacity(n_l);
        let mut star_offsets = Vec::with_capacity(n_l);
        for _ in 0..n_l {
            let (z, off) = src.next();
            let models = gps
                .iter()
                .map(|g| g.with_inputs(z.clone()))
                .collect::<Result<Vec<_>>>()?;
            draws.push(models);
            star_offsets.push(off);
        }
        Ok(Self { draws, star_offsets })
    }

    pub fn n_l(&self) -> usize {
        self.draws.len()
    }

    pub fn predict(&self, z_bar: &[f64]) -> Vec<MarginalEstimate> {
        let d_y = self.draws[0].len();
        let mut acc: Vec<Moments> = (0..d_y).map(|_| Moments::default()).collect();
        let mut z = vec![0.0; z_bar.len()];
        for (models, off) in self.draws.iter().zip(&self.star_offsets) {
            for i in 0..z.len() {
                z[i] = z_bar[i] + off[i];
            }
            for (gp, a) in models.iter().zip(acc.iter_mut()) {
                let (m, v) = gp.predict_point(&z);
                a.add(m, v);
            }
        }
        acc.iter().map(Moments::finish).collect()
    }
}

impl Surrogate for MarginalPredictor {
    fn predict_into(&self, z: &[f64], out: &mut [(f64, f64)]) {
        for (o, e) in out.iter_mut().zip(self.predict(z)) {
            *o = (e.mean, e.std());
        }
    }
    fn outputs(&self) -> usize {
        self.draws[0].len()
    }
}

/// Marginal predictive at one test latent, streaming the draws so that very
/// large `n_l` needs no storage. Uses the same draw sequence as
/// [`MarginalPredictor::new`] with the same seed.
pub fn marginal_predictive(
    gps: &[GpModel],
    model: &PplsModel,
    data: &Dataset,
    z_bar_star: &[f64],
    n_l: usize,
    seed: u64,
) -> Result<Vec<MarginalEstimate>> {
    let (means, sigma_z) = latent_posteriors(model, data.s(), data.y())?;
    marginal_predictive_from(gps, &means, &sigma_z, z_bar_star, n_l, seed)
}

/// As [`marginal_predictive`], from explicit posterior means and covariance.
pub fn marginal_predictive_from(
    gps: &[GpModel],
    means: &DMatrix<f64>,
    sigma_z: &DMatrix<f64>,
    z_bar_star: &[f64],
    n_l: usize,
    seed: u64,
) -> Result<Vec<MarginalEstimate>> {
    if n_l < 2 {
        return Err(Error::invalid("marginal predictive needs n_l >= 2"));
    }
    if z_bar_star.len() != means.ncols() {
        return Err(Error::dims("test latent dimension mismatch"));
    }
    let mut src = LatentDraws::new(means, sigma_z, seed)?;
    let mut acc: Vec<Moments> = gps.iter().map(|_| Moments::default()).collect();
    let mut z = vec![0.0; z_bar_star.len()];
    for _ in 0..n_l {
        let (zl, off) = src.next();
        for i in 0..z.len() {
            z[i] = z_bar_star[i] + off[i];
        }
        for (g, a) in gps.iter().zip(acc.iter_mut()) {
            let (m, v) = g.with_inputs(zl.clone())?.predict_point(&z);
            a.add(m, v);
        }
    }
    Ok(acc.iter().map(Moments::finish).collect())
}

/// Acquisition on normalised predictions, weighted by constraint feasibility.
struct AcqContext {
    kind: AcquisitionKind,
    gamma: f64,
    xi: f64,
    rho: f64,
    y_best: f64,
    mean_y: Vec<f64>,
    scale_y: Vec<f64>,
    shift: f64,
}

impl AcqContext {
    fn new(config: &RunConfig, data: &Dataset, k: usize, d_z: usize) -> Self {
        let y = data.y_raw();
        let feasible_best = (0..y.nrows())
            .filter(|&i| is_feasible(&y.row(i).iter().copied().collect::<Vec<_>>()))
            .map(|i| y[(i, 0)])
            .fold(f64::INFINITY, f64::min);
        let best = if feasible_best.is_finite() {
            feasible_best
        } else {
            y.column(0).min()
        };
        let scale0 = data.scale_y()[0];
        Self {
            kind: config.acquisition.kind,
            gamma: config.acquisition.gamma.gamma(k, d_z),
            xi: config.acquisition.xi / scale0,
            rho: config.acquisition.rho,
            y_best: (best - data.mean_y()[0]) / scale0,
            mean_y: data.mean_y().iter().copied().collect(),
            scale_y: data.scale_y().iter().copied().collect(),
            shift: 0.0,
        }
    }

    fn base(&self, mu: f64, sd: f64) -> f64 {
        match self.kind {
            AcquisitionKind::Ei => ei(mu, sd, self.y_best, self.xi),
            AcquisitionKind::Ucb => (ucb(mu, sd, self.gamma) + self.shift).max(0.0),
        }
    }

    fn value(&self, preds: &[(f64, f64)]) -> f64 {
        let (mu, sd) = preds[0];
        let base = self.base(mu, sd);
        if preds.len() == 1 {
            return base;
        }
        let cons: Vec<(f64, f64)> = preds[1..]
            .iter()
            .enumerate()
            .map(|(j, (m, s))| {
                let scale = self.scale_y[j + 1];
                (self.mean_y[j + 1] + scale * m, scale * s)
            })
            .collect();
        base * constrained_weight(&cons, &[self.rho])
    }
}

/// Outcome of one proposal step.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    /// Raw-unit design to evaluate, inside the domain.
    pub s: Vec<f64>,
    pub latent: Vec<f64>,
    pub acquisition: f64,
    pub gp: Vec<Hyperparameters>,
}

fn fit_output_gps(
    inputs: &DMatrix<f64>,
    data: &Dataset,
    config: &RunConfig,
    k: usize,
    warm: &[Hyperparameters],
) -> Result<Vec<GpModel>> {
    (0..data.d_y())
        .map(|j| {
            let init = warm
                .get(j)
                .filter(|h| config.warm_start && h.dim() == inputs.ncols())
                .cloned();
            let cfg = GpFitConfig {
                restarts: config.gp_restarts,
                seed: config.seed(STREAM_GP, (k * 64 + j) as u64),
                max_iter: 200,
                convention: config.kernel_convention,
                init,
            };
            gp_fit(inputs, &data.y().column(j).into_owned(), &cfg)
        })
        .collect()
}

/// Maximises the constrained acquisition over the latent box; points whose
/// reconstruction leaves the domain score `−1 − violation`, below any
/// admissible point.
fn choose_latent(
    surrogate: &dyn Surrogate,
    geometry: &LatentGeometry,
    train_z: &DMatrix<f64>,
    data: &Dataset,
    config: &RunConfig,
    k: usize,
) -> Result<(Vec<f64>, f64)> {
    let d_z = geometry.basis().ncols();
    let bounds = geometry.bounds().clone();
    let mut ctx = AcqContext::new(config, data, k, d_z);
    let mut buf = vec![(0.0, 0.0); surrogate.outputs()];

    if ctx.kind == AcquisitionKind::Ucb {
        // fixed non-negativity shift from a probe set, so that constraint
        // down-weighting never rewards an infeasible region
        let mut rng = seeded_rng(config.seed(STREAM_PROBE, k as u64));
        let mut lowest = f64::INFINITY;
        let mut probe = |z: &[f64], buf: &mut [(f64, f64)]| {
            surrogate.predict_into(z, buf);
            let v = ucb(buf[0].0, buf[0].1, ctx.gamma);
            if v.is_finite() {
                lowest = lowest.min(v);
            }
        };
        for i in 0..train_z.nrows() {
            let z: Vec<f64> = train_z.row(i).iter().copied().collect();
            probe(&z, &mut buf);
        }
        for _ in 0..64 {
            let z: Vec<f64> = (0..d_z)
                .map(|i| bounds.lower[i] + rng.random::<f64>() * (bounds.upper[i] - bounds.lower[i]))
                .collect();
            probe(&z, &mut buf);
        }
        ctx.shift = if lowest.is_finite() { (-lowest).max(0.0) } else { 0.0 };
    }

    let f = |z: &[f64]| {
        if !geometry.indicator(z) {
            return -1.0 - geometry.violation(z);
        }
        let mut local = vec![(0.0, 0.0); surrogate.outputs()];
        surrogate.predict_into(z, &mut local);
        ctx.value(&local)
    };

    let mut seeds = vec![vec![0.0; d_z]];
    if let Ok(best) = best_row(data) {
        seeds.push(train_z.row(best).iter().copied().collect());
    }
    let cfg = MaximizerConfig::new(config.maximizer_budget, config.seed(STREAM_MAXIMIZER, k as u64));
    maximize_acquisition(f, &bounds.lower, &bounds.upper, &cfg, &seeds)
}

fn best_row(data: &Dataset) -> Result<usize> {
    let y = data.y_raw();
    let rows: Vec<usize> = (0..y.nrows()).collect();
    let feasible: Vec<usize> = rows
        .iter()
        .copied()
        .filter(|&i| is_feasible(&y.row(i).iter().copied().collect::<Vec<_>>()))
        .collect();
    let pool = if feasible.is_empty() { rows } else { feasible };
    pool.into_iter()
        .min_by(|a, b| y[(*a, 0)].total_cmp(&y[(*b, 0)]))
        .ok_or_else(|| Error::invalid("no data"))
}

/// Proposal in the deterministic subspace spanned by `w` (d_s × d_z, mapping
/// latents to normalised designs). The identity basis gives classical BO.
pub fn propose_in_subspace(
    problem: &Problem,
    data: &Dataset,
    w: &DMatrix<f64>,
    config: &RunConfig,
    k: usize,
    warm: &[Hyperparameters],
) -> Result<Proposal> {
    let z = data.s() * w;
    let gps = fit_output_gps(&z, data, config, k, warm)?;
    let geometry = LatentGeometry::new(w.clone(), data.mean_s(), data.scale_s(), &problem.domain)?;
    let (latent, acquisition) = choose_latent(&gps, &geometry, &z, data, config, k)?;
    let latent = geometry.pull_inside(&latent);
    let mut s = geometry.reconstruct(&latent);
    problem.domain.clip(&mut s);
    Ok(Proposal {
        s,
        latent,
        acquisition,
        gp: gps.iter().map(|g| g.hyperparameters().clone()).collect(),
    })
}

/// PPLS proposal: GPs on posterior-mean latents, marginal predictive over
/// latent uncertainty, then a design drawn from `p(s | z̄)` and clipped.
pub fn propose_ppls(
    problem: &Problem,
    data: &Dataset,
    model: &PplsModel,
    config: &RunConfig,
    k: usize,
    warm: &[Hyperparameters],
) -> Result<Proposal> {
    let (means, sigma_z) = latent_posteriors(model, data.s(), data.y())?;
    let gps = fit_output_gps(&means, data, config, k, warm)?;
    let predictor = MarginalPredictor::new(
        &gps,
        &means,
        &sigma_z,
        config.n_l,
        config.seed(STREAM_MC, k as u64),
    )?;
    let geometry = LatentGeometry::new(model.w.clone(), data.mean_s(), data.scale_s(), &problem.domain)?;
    let (latent, acquisition) = choose_latent(&predictor, &geometry, &means, data, config, k)?;
    let density = conditional_design_density(model, &latent)?;
    let s_norm = density.sample(&mut seeded_rng(config.seed(STREAM_SAMPLE, k as u64)));
    let mut s = geometry.denormalize(s_norm);
    problem.domain.clip(&mut s);
    Ok(Proposal {
        s,
        latent,
        acquisition,
        gp: gps.iter().map(|g| g.hyperparameters().clone()).collect(),
    })
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Runs `config.method` on `problem`.
pub fn run(problem: &Problem, config: &RunConfig) -> std::result::Result<Trace, RunError> {
    let mut trace = Trace {
        problem: problem.name.clone(),
        method: config.method,
        seed: config.seed,
        d_s: problem.d_s(),
        d_y: problem.d_y,
        d_z: (config.method != Method::Bo).then_some(config.d_z),
        n_init: 0,
        rows: Vec::new(),
        digests: Vec::new(),
    };
    match run_into(problem, config, &mut trace) {
        Ok(()) => Ok(trace),
        Err(error) => Err(RunError { trace, error }),
    }
}

fn reached(trace: &Trace, config: &RunConfig) -> bool {
    match (config.stop_below, trace.final_incumbent()) {
        (Some(t), Some(inc)) => inc < t,
        _ => false,
    }
}

fn run_into(problem: &Problem, config: &RunConfig, trace: &mut Trace) -> Result<()> {
    config.validate(problem.d_s())?;
    let init = initial_design(&problem.domain, &config.init, config.seed)?;
    trace.n_init = init.nrows();
    for i in 0..init.nrows() {
        let s: Vec<f64> = init.row(i).iter().copied().collect();
        let y = problem.evaluate(&s, 0)?;
        trace.push(0, s, y);
    }

    let mut warm: Vec<Hyperparameters> = Vec::new();
    let mut ppls: Option<PplsModel> = None;
    for k in 1..=config.n_k {
        if reached(trace, config) {
            break;
        }
        let (s_raw, y_raw) = trace.data();
        let data = normalize(&s_raw, &y_raw)?;
        let mut elbo = None;
        let mut em_iterations = None;
        let (proposal, basis) = match config.method {
            Method::Bo => {
                let w = DMatrix::identity(problem.d_s(), problem.d_s());
                (propose_in_subspace(problem, &data, &w, config, k, &warm)?, None)
            }
            Method::PcaBo => {
                let w = pca_fit(&data, config.d_z)?.w;
                let p = propose_in_subspace(problem, &data, &w, config, k, &warm)?;
                (p, Some(w))
            }
            Method::PlsBo => {
                let w = nipals_fit(&data, config.d_z)?.w;
                let p = propose_in_subspace(problem, &data, &w, config, k, &warm)?;
                (p, Some(w))
            }
            Method::PplsBo => {
                let em = EmConfig::new(config.d_z, config.n_t, config.seed(STREAM_EM, k as u64));
                let init = if config.warm_start { ppls.as_ref() } else { None };
                let (model, report) = em_fit(&data, &em, init)?;
                elbo = Some(report.final_elbo()).filter(|v| v.is_finite());
                em_iterations = Some(report.iterations);
                let p = propose_ppls(problem, &data, &model, config, k, &warm)?;
                let w = model.w.clone();
                ppls = Some(model);
                (p, Some(w))
            }
        };
        let y = problem.evaluate(&proposal.s, k)?;
        trace.digests.push(IterationDigest {
            k,
            elbo,
            em_iterations,
            gp: proposal.gp.clone(),
            basis: basis.as_ref().map(row_major),
            mean_s: data.mean_s().iter().copied().collect(),
            scale_s: data.scale_s().iter().copied().collect(),
            latent: basis.as_ref().map(|_| proposal.latent.clone()),
            acquisition: proposal.acquisition,
        });
        trace.push(k, proposal.s, y);
        warm = proposal.gp;
    }
    Ok(())
}

fn with_method(config: &RunConfig, method: Method) -> RunConfig {
    RunConfig {
        method,
        ..config.clone()
    }
}

pub fn run_bo(problem: &Problem, config: &RunConfig) -> std::result::Result<Trace, RunError> {
    run(problem, &with_method(config, Method::Bo))
}

pub fn run_pca_bo(problem: &Problem, config: &RunConfig) -> std::result::Result<Trace, RunError> {
    run(problem, &with_method(config, Method::PcaBo))
}

pub fn run_pls_bo(problem: &Problem, config: &RunConfig) -> std::result::Result<Trace, RunError> {
    run(problem, &with_method(config, Method::PlsBo))
}

pub fn run_ppls_bo(problem: &Problem, config: &RunConfig) -> std::result::Result<Trace, RunError> {
    run(problem, &with_method(config, Method::PplsBo))
}
