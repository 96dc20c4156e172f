//! Probabilistic partial least squares.
//!
//! Generative model, with a shared latent `z ~ N(0, I)`:
//!
//! ```text
//! s = W z + e_s,   e_s ~ N(0, Σ_s)   (Σ_s diagonal)
//! y = Q z + e_y,   e_y ~ N(0, Σ_y)   (Σ_y diagonal)
//! ```
//!
//! Stacking `d = [y; s]` and `B = [Q; W]` the marginal is `N(0, B Bᵀ + D)` with
//! `D = diag(Σ_y, Σ_s)`. All posterior and evidence computations below go
//! through the `d_z × d_z` precision `P = I + Bᵀ D⁻¹ B` (Woodbury form), which
//! equals the direct block formulas but stays well conditioned when the noise
//! variances sit at their floor.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::doe::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, random_orthonormal, seeded_rng, standard_normal_vector};

/// Lower bound applied to every reconstruction variance.
pub const VARIANCE_FLOOR: f64 = 1e-8;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct PplsModel {
    /// Input loadings, d_s × d_z.
    pub w: DMatrix<f64>,
    /// Output loadings, d_y × d_z.
    pub q: DMatrix<f64>,
    /// Diagonal of Σ_s.
    pub sigma_s: DVector<f64>,
    /// Diagonal of Σ_y.
    pub sigma_y: DVector<f64>,
}

impl PplsModel {
    pub fn new(
        w: DMatrix<f64>,
        q: DMatrix<f64>,
        sigma_s: DVector<f64>,
        sigma_y: DVector<f64>,
    ) -> Result<Self> {
        if w.ncols() != q.ncols() {
            return Err(Error::dims("W and Q need the same number of columns"));
        }
        if sigma_s.len() != w.nrows() || sigma_y.len() != q.nrows() {
            return Err(Error::dims("noise diagonals do not match loadings"));
        }
        if sigma_s.iter().chain(sigma_y.iter()).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("noise variances must be positive and finite"));
        }
        Ok(Self {
            w,
            q,
            sigma_s,
            sigma_y,
        })
    }

    /// QR-initialised loadings with unit noise.
    pub fn initial(d_s: usize, d_y: usize, d_z: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let w = random_orthonormal(d_s, d_z, &mut rng);
        let q = random_orthonormal(d_y, d_z, &mut rng);
        Self {
            w,
            q,
            sigma_s: DVector::from_element(d_s, 1.0),
            sigma_y: DVector::from_element(d_y, 1.0),
        }
    }

    pub fn d_s(&self) -> usize {
        self.w.nrows()
    }
    pub fn d_y(&self) -> usize {
        self.q.nrows()
    }
    pub fn d_z(&self) -> usize {
        self.w.ncols()
    }

    /// Draws `(s, y)` pairs from the generative model.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut s = DMatrix::zeros(n, self.d_s());
        let mut y = DMatrix::zeros(n, self.d_y());
        let sd_s = self.sigma_s.map(f64::sqrt);
        let sd_y = self.sigma_y.map(f64::sqrt);
        for i in 0..n {
            let z = standard_normal_vector(self.d_z(), rng);
            let es = standard_normal_vector(self.d_s(), rng);
            let ey = standard_normal_vector(self.d_y(), rng);
            let si = &self.w * &z + es.component_mul(&sd_s);
            let yi = &self.q * &z + ey.component_mul(&sd_y);
            s.set_row(i, &si.transpose());
            y.set_row(i, &yi.transpose());
        }
        (s, y)
    }
}

/// Gaussian posterior `N(mu, sigma)` of one latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPosterior {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

/// Covariance of the stacked vector `[y; s]` under the model.
pub fn marginal_covariance(model: &PplsModel) -> DMatrix<f64> {
    let (d_y, d_s) = (model.d_y(), model.d_s());
    let mut b = DMatrix::zeros(d_y + d_s, model.d_z());
    b.rows_mut(0, d_y).copy_from(&model.q);
    b.rows_mut(d_y, d_s).copy_from(&model.w);
    let mut cov = &b * b.transpose();
    for i in 0..d_y {
        cov[(i, i)] += model.sigma_y[i];
    }
    for i in 0..d_s {
        cov[(d_y + i, d_y + i)] += model.sigma_s[i];
    }
    cov
}

/// Quantities shared by every posterior under a fixed model.
struct PosteriorCore {
    chol: Cholesky<f64, Dyn>,
    sigma_z: DMatrix<f64>,
    w_scaled: DMatrix<f64>,
    q_scaled: DMatrix<f64>,
}

impl PosteriorCore {
    fn new(model: &PplsModel) -> Result<Self> {
        if model
            .sigma_s
            .iter()
            .chain(model.sigma_y.iter())
            .any(|v| !(*v > 0.0 && v.is_finite()))
        {
            return Err(Error::numerical(
                "marginal covariance is singular: non-positive noise variance",
            ));
        }
        // D⁻¹ W and D⁻¹ Q
        let w_scaled = DMatrix::from_fn(model.d_s(), model.d_z(), |i, j| {
            model.w[(i, j)] / model.sigma_s[i]
        });
        let q_scaled = DMatrix::from_fn(model.d_y(), model.d_z(), |i, j| {
            model.q[(i, j)] / model.sigma_y[i]
        });
        let mut precision = model.w.tr_mul(&w_scaled) + model.q.tr_mul(&q_scaled);
        for i in 0..model.d_z() {
            precision[(i, i)] += 1.0;
        }
        precision = (&precision + precision.transpose()) * 0.5;
        let chol = Cholesky::new(precision).ok_or_else(|| {
            Error::numerical("latent precision is not positive definite (degenerate noise)")
        })?;
        let mut sigma_z = chol.inverse();
        sigma_z = (&sigma_z + sigma_z.transpose()) * 0.5;
        Ok(Self {
            chol,
            sigma_z,
            w_scaled,
            q_scaled,
        })
    }

    /// `Bᵀ D⁻¹ d` for every row, as an n × d_z matrix.
    fn projections(&self, s: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
        s * &self.w_scaled + y * &self.q_scaled
    }

    fn means(&self, proj: &DMatrix<f64>) -> DMatrix<f64> {
        // rows of proj times Σ_z (symmetric)
        proj * &self.sigma_z
    }

    fn ln_det_precision(&self) -> f64 {
        2.0 * self.chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }
}

fn check_rows(model: &PplsModel, s: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    if s.ncols() != model.d_s() || y.ncols() != model.d_y() || s.nrows() != y.nrows() {
        return Err(Error::dims(format!(
            "data {}x{} / {}x{} does not match model d_s={}, d_y={}",
            s.nrows(),
            s.ncols(),
            y.nrows(),
            y.ncols(),
            model.d_s(),
            model.d_y()
        )));
    }
    Ok(())
}

/// Exact posterior of the latent given one normalised `(y, s)` pair.
pub fn latent_posterior(model: &PplsModel, y: &[f64], s: &[f64]) -> Result<LatentPosterior> {
    let s = DMatrix::from_row_slice(1, s.len(), s);
    let y = DMatrix::from_row_slice(1, y.len(), y);
    check_rows(model, &s, &y)?;
    let core = PosteriorCore::new(model)?;
    let mu = core.means(&core.projections(&s, &y)).row(0).transpose();
    Ok(LatentPosterior {
        mu,
        sigma: core.sigma_z,
    })
}

/// Posterior means (n × d_z) for every row plus the shared covariance.
pub fn latent_posteriors(
    model: &PplsModel,
    s: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_rows(model, s, y)?;
    let core = PosteriorCore::new(model)?;
    let means = core.means(&core.projections(s, y));
    Ok((means, core.sigma_z))
}

/// `Σᵢ ln N([yᵢ; sᵢ]; 0, Σ_ys)`, the exact log evidence of the rows.
pub fn log_evidence(model: &PplsModel, s: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    check_rows(model, s, y)?;
    let core = PosteriorCore::new(model)?;
    let proj = core.projections(s, y);
    let means = core.means(&proj);
    let d = (model.d_s() + model.d_y()) as f64;
    let ln_det_d: f64 = model.sigma_s.iter().chain(model.sigma_y.iter()).map(|v| v.ln()).sum();
    let ln_det = ln_det_d + core.ln_det_precision();
    let mut total = 0.0;
    for i in 0..s.nrows() {
        let mut quad = 0.0;
        for j in 0..model.d_s() {
            quad += s[(i, j)] * s[(i, j)] / model.sigma_s[j];
        }
        for j in 0..model.d_y() {
            quad += y[(i, j)] * y[(i, j)] / model.sigma_y[j];
        }
        quad -= proj.row(i).dot(&means.row(i));
        total += -0.5 * (d * LN_2PI + ln_det + quad);
    }
    Ok(total)
}

/// Evidence lower bound `Σᵢ E_q[ln p(yᵢ, sᵢ | z)] + E_q[ln p(z)] − E_q[ln q(z)]`
/// for one Gaussian trial density per row (rows of normalised `s`, `y`).
pub fn elbo(
    model: &PplsModel,
    s: &DMatrix<f64>,
    y: &DMatrix<f64>,
    q: &[LatentPosterior],
) -> Result<f64> {
    check_rows(model, s, y)?;
    if q.len() != s.nrows() {
        return Err(Error::dims(format!(
            "{} trial densities for {} rows",
            q.len(),
            s.nrows()
        )));
    }
    let d_z = model.d_z();
    let ln_det_s: f64 = model.sigma_s.iter().map(|v| v.ln()).sum();
    let ln_det_y: f64 = model.sigma_y.iter().map(|v| v.ln()).sum();
    let mut total = 0.0;
    for (i, qi) in q.iter().enumerate() {
        if qi.mu.len() != d_z || qi.sigma.shape() != (d_z, d_z) {
            return Err(Error::dims("trial density has the wrong latent dimension"));
        }
        let chol = Cholesky::new((&qi.sigma + qi.sigma.transpose()) * 0.5).ok_or_else(|| {
            Error::invalid(format!("trial covariance of row {i} is not positive definite"))
        })?;
        let ln_det_q = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();

        let mut expected = 0.0;
        let ws = &model.w * &qi.mu;
        let wvw = &model.w * &qi.sigma;
        for j in 0..model.d_s() {
            let r = s[(i, j)] - ws[j];
            let spread = wvw.row(j).dot(&model.w.row(j));
            expected += (r * r + spread) / model.sigma_s[j];
        }
        let qs = &model.q * &qi.mu;
        let qvq = &model.q * &qi.sigma;
        for j in 0..model.d_y() {
            let r = y[(i, j)] - qs[j];
            let spread = qvq.row(j).dot(&model.q.row(j));
            expected += (r * r + spread) / model.sigma_y[j];
        }
        let likelihood = -0.5
            * ((model.d_s() + model.d_y()) as f64 * LN_2PI + ln_det_s + ln_det_y + expected);
        let prior = -0.5 * (d_z as f64 * LN_2PI + qi.mu.norm_squared() + qi.sigma.trace());
        let entropy = 0.5 * (d_z as f64 * (LN_2PI + 1.0) + ln_det_q);
        total += likelihood + prior + entropy;
    }
    Ok(total)
}

/// [`elbo`] on the normalised columns of a dataset.
pub fn elbo_dataset(model: &PplsModel, data: &Dataset, q: &[LatentPosterior]) -> Result<f64> {
    elbo(model, data.s(), data.y(), q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub d_z: usize,
    /// Maximum number of E/M sweeps.
    pub n_t: usize,
    /// Early exit when the evidence gain of a sweep drops below this.
    pub tol: f64,
    /// Seed of the QR initialisation (ignored when an init model is given).
    pub seed: u64,
}

impl EmConfig {
    pub fn new(d_z: usize, n_t: usize, seed: u64) -> Self {
        Self {
            d_z,
            n_t,
            tol: 1e-10,
            seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmReport {
    /// Sweeps actually run.
    pub iterations: usize,
    /// Exact log evidence before the first sweep and after each sweep.
    pub elbo_trace: Vec<f64>,
    /// Sweeps where the orthogonalised loading update did not improve the
    /// expected complete-data log likelihood and the previous loading was kept.
    pub kept_loadings: usize,
}

impl EmReport {
    pub fn final_elbo(&self) -> f64 {
        self.elbo_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Expected complete-data log likelihood of one view (up to constants),
/// with the optimal floored diagonal noise for loading `l`.
struct ViewUpdate {
    noise: DVector<f64>,
    objective: f64,
}

fn view_update(
    l: &DMatrix<f64>,
    gram_diag: &DVector<f64>,
    cross: &DMatrix<f64>,
    ezz: &DMatrix<f64>,
    n: f64,
) -> ViewUpdate {
    let l_ezz = l * ezz;
    let mut noise = DVector::zeros(l.nrows());
    let mut objective = 0.0;
    for j in 0..l.nrows() {
        let r = gram_diag[j] - 2.0 * l.row(j).dot(&cross.row(j)) + l_ezz.row(j).dot(&l.row(j));
        let v = (r / n).max(VARIANCE_FLOOR);
        noise[j] = v;
        objective += -0.5 * (n * v.ln() + r.max(0.0) / v);
    }
    ViewUpdate { noise, objective }
}

/// Orthogonalised loading update `L = G C⁻ᵀ` where `C Cᵀ = GᵀG` and
/// `G = Xᵀ E(Z)`; escalates jitter when `GᵀG` is rank deficient.
fn orthogonal_loading(cross: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = cross.tr_mul(cross);
    let (chol, _) = cholesky_jittered(&gram, 1e-10, 1e-4).map_err(|_| {
        Error::numerical("loading Gram matrix is rank deficient after jitter; reduce d_z")
    })?;
    let lt_inv_gt = chol
        .l()
        .solve_lower_triangular(&cross.transpose())
        .ok_or_else(|| Error::numerical("triangular solve failed in loading update"))?;
    Ok(lt_inv_gt.transpose())
}

/// Nearest orthonormal matrix `U Vᵀ` (Procrustes); exact maximiser of the
/// loading step when the noise is isotropic.
fn polar_loading(g: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let svd = g.clone().svd(true, true);
    Some(svd.u? * svd.v_t?)
}

/// Rotates the latent axes (leaving the evidence unchanged) so that they are
/// ordered by the input-output cross covariance they carry, then fixes signs
/// so each column of `W` has its largest entry positive.
fn canonical_rotation(model: &mut PplsModel, s: &DMatrix<f64>, y: &DMatrix<f64>) {
    let m = model.w.tr_mul(&s.tr_mul(y));
    let eig = (&m * m.transpose()).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let d_z = model.d_z();
    let mut r = DMatrix::from_fn(d_z, d_z, |i, j| eig.eigenvectors[(i, order[j])]);
    let w = &model.w * &r;
    for j in 0..d_z {
        let col = w.column(j);
        let big = col.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if big < 0.0 {
            r.column_mut(j).neg_mut();
        }
    }
    model.w = &model.w * &r;
    model.q = &model.q * &r;
}

/// Runs EM on normalised matrices. Each sweep computes the exact latent
/// posteriors, then updates the loadings by Cholesky orthogonalisation of the
/// aggregated cross moments and the diagonal noises in closed form.
pub fn em_fit_matrices(
    s: &DMatrix<f64>,
    y: &DMatrix<f64>,
    config: &EmConfig,
    init: Option<&PplsModel>,
) -> Result<(PplsModel, EmReport)> {
    let (n, d_s) = s.shape();
    let d_y = y.ncols();
    if y.nrows() != n {
        return Err(Error::dims("S and Y row counts differ"));
    }
    if config.d_z == 0 || config.d_z > d_s {
        return Err(Error::invalid(format!(
            "d_z = {} must satisfy 1 <= d_z <= d_s = {d_s}",
            config.d_z
        )));
    }
    let mut model = match init {
        Some(m) => {
            if m.d_s() != d_s || m.d_y() != d_y || m.d_z() != config.d_z {
                return Err(Error::dims("init model dimensions do not match data"));
            }
            m.clone()
        }
        None => PplsModel::initial(d_s, d_y, config.d_z, config.seed),
    };
    let mut report = EmReport::default();
    if config.n_t == 0 {
        return Ok((model, report));
    }

    let nf = n as f64;
    let s_gram = DVector::from_iterator(d_s, s.column_iter().map(|c| c.norm_squared()));
    let y_gram = DVector::from_iterator(d_y, y.column_iter().map(|c| c.norm_squared()));
    let mut current = log_evidence(&model, s, y)?;
    report.elbo_trace.push(current);

    for _ in 0..config.n_t {
        // E-step
        let (means, sigma_z) = latent_posteriors(&model, s, y)?;
        let ezz = &sigma_z * nf + means.tr_mul(&means);
        let cross_s = s.tr_mul(&means);
        let cross_y = y.tr_mul(&means);

        // M-step, one view at a time: the Cholesky-orthogonalised update and
        // two Procrustes variants compete; the previous loading is kept when
        // none of them raises the expected log likelihood
        let mut kept = false;
        let mut next = model.clone();
        for (view_s, cross, gram_diag) in [(true, &cross_s, &s_gram), (false, &cross_y, &y_gram)] {
            let old = if view_s { &model.w } else { &model.q };
            let noise = if view_s { &model.sigma_s } else { &model.sigma_y };
            let weighted = DMatrix::from_fn(cross.nrows(), cross.ncols(), |i, j| cross[(i, j)] / noise[i]);
            let mut best: Option<(DMatrix<f64>, ViewUpdate)> = None;
            for candidate in std::iter::once(orthogonal_loading(cross)?)
                .chain(polar_loading(cross))
                .chain(polar_loading(&weighted))
            {
                let upd = view_update(&candidate, gram_diag, cross, &ezz, nf);
                if best.as_ref().is_none_or(|(_, b)| upd.objective > b.objective) {
                    best = Some((candidate, upd));
                }
            }
            let (candidate, cand_upd) = best.expect("Cholesky candidate always present");
            let old_upd = view_update(old, gram_diag, cross, &ezz, nf);
            let (loading, upd) = if cand_upd.objective >= old_upd.objective {
                (candidate, cand_upd)
            } else {
                kept = true;
                (old.clone(), old_upd)
            };
            if view_s {
                next.w = loading;
                next.sigma_s = upd.noise;
            } else {
                next.q = loading;
                next.sigma_y = upd.noise;
            }
        }
        if kept {
            report.kept_loadings += 1;
        }

        let value = log_evidence(&next, s, y)?;
        model = next;
        report.iterations += 1;
        report.elbo_trace.push(value);
        let gain = value - current;
        current = value;
        if gain < config.tol {
            break;
        }
    }
    canonical_rotation(&mut model, s, y);
    Ok((model, report))
}

/// Runs EM on the normalised columns of `data`.
pub fn em_fit(
    data: &Dataset,
    config: &EmConfig,
    init: Option<&PplsModel>,
) -> Result<(PplsModel, EmReport)> {
    em_fit_matrices(data.s(), data.y(), config, init)
}

/// Gaussian with diagonal covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
}

impl DiagGaussian {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let e = standard_normal_vector(self.mean.len(), rng);
        DVector::from_fn(self.mean.len(), |i, _| {
            self.mean[i] + self.variance[i].sqrt() * e[i]
        })
    }
}

/// `p(s | z̄) = N(W z̄, Σ_s)` in normalised design coordinates.
pub fn conditional_design_density(model: &PplsModel, z_bar: &[f64]) -> Result<DiagGaussian> {
    if z_bar.len() != model.d_z() {
        return Err(Error::dims("latent dimension mismatch"));
    }
    Ok(DiagGaussian {
        mean: &model.w * DVector::from_column_slice(z_bar),
        variance: model.sigma_s.clone(),
    })
}

/// JSON form of a fitted model; matrices are stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplsDocument {
    pub d_s: usize,
    pub d_y: usize,
    pub d_z: usize,
    pub w: Vec<f64>,
    pub q: Vec<f64>,
    pub sigma_s: Vec<f64>,
    pub sigma_y: Vec<f64>,
    pub iterations: usize,
    pub final_elbo: Option<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl PplsDocument {
    pub fn from_model(model: &PplsModel, report: Option<&EmReport>) -> Self {
        Self {
            d_s: model.d_s(),
            d_y: model.d_y(),
            d_z: model.d_z(),
            w: row_major(&model.w),
            q: row_major(&model.q),
            sigma_s: model.sigma_s.as_slice().to_vec(),
            sigma_y: model.sigma_y.as_slice().to_vec(),
            iterations: report.map(|r| r.iterations).unwrap_or(0),
            final_elbo: report.map(|r| r.final_elbo()).filter(|v| v.is_finite()),
        }
    }

    pub fn to_model(&self) -> Result<PplsModel> {
        if self.w.len() != self.d_s * self.d_z || self.q.len() != self.d_y * self.d_z {
            return Err(Error::dims("loading arrays do not match declared dimensions"));
        }
        PplsModel::new(
            DMatrix::from_row_slice(self.d_s, self.d_z, &self.w),
            DMatrix::from_row_slice(self.d_y, self.d_z, &self.q),
            DVector::from_column_slice(&self.sigma_s),
            DVector::from_column_slice(&self.sigma_y),
        )
    }
}
