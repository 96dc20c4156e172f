//! Deterministic linear dimension reduction: PLS fitted with NIPALS, and a
//! PCA baseline that looks at the inputs only.

use nalgebra::{DMatrix, DVector};

use crate::doe::Dataset;
use crate::error::{Error, Result};
use crate::linalg::fix_column_signs;

const NIPALS_TOL: f64 = 1e-10;
const NIPALS_MAX_ITER: usize = 500;

/// Orthonormal input basis `W` (d_s × d_z) and normalised output directions
/// `Q` (d_y × d_z) from a PLS fit.
#[derive(Debug, Clone)]
pub struct PlsBasis {
    pub w: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pinv_t: DMatrix<f64>,
}

impl PlsBasis {
    /// Wraps an arbitrary full-column-rank basis; `q` may be empty.
    pub fn from_parts(w: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        let pinv = w
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::numerical(format!("pseudo-inverse failed: {e}")))?;
        Ok(Self {
            w,
            q,
            pinv_t: pinv.transpose(),
        })
    }

    pub fn d_s(&self) -> usize {
        self.w.nrows()
    }

    pub fn d_z(&self) -> usize {
        self.w.ncols()
    }

    /// Input-side latent scores `z = Wᵀs`.
    pub fn project(&self, s: &[f64]) -> Result<DVector<f64>> {
        if s.len() != self.d_s() {
            return Err(Error::dims(format!(
                "design has {} entries, basis has {} rows",
                s.len(),
                self.d_s()
            )));
        }
        Ok(self.w.tr_mul(&DVector::from_column_slice(s)))
    }

    /// Output-side scores `v = Qᵀy`.
    pub fn project_output(&self, y: &[f64]) -> Result<DVector<f64>> {
        if y.len() != self.q.nrows() {
            return Err(Error::dims("output length does not match Q"));
        }
        Ok(self.q.tr_mul(&DVector::from_column_slice(y)))
    }

    /// Scores of every row of `s` (n × d_s) → n × d_z.
    pub fn project_rows(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        s * &self.w
    }
}

/// Reconstructs a design from latent coordinates, `s = (W†)ᵀ z`, taking the
/// low-rank approximation error as zero.
pub fn pls_reconstruct(z: &[f64], basis: &PlsBasis) -> Result<DVector<f64>> {
    if z.len() != basis.d_z() {
        return Err(Error::dims(format!(
            "latent has {} entries, basis has {} columns",
            z.len(),
            basis.d_z()
        )));
    }
    Ok(&basis.pinv_t * DVector::from_column_slice(z))
}

fn check_dz(d_z: usize, d_s: usize, n: usize) -> Result<()> {
    if d_z == 0 || d_z > d_s || d_z + 1 > n {
        return Err(Error::invalid(format!(
            "d_z = {d_z} must satisfy 1 <= d_z <= min(d_s = {d_s}, n - 1 = {})",
            n.saturating_sub(1)
        )));
    }
    Ok(())
}

fn gram_schmidt(v: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for b in basis {
        let c = b.dot(v);
        v.axpy(-c, b, 1.0);
    }
}

// Unit vector orthogonal to `previous`, chosen along the dominant remaining
// input variance, or a canonical direction when nothing is left.
fn fallback_direction(x: &DMatrix<f64>, previous: &[DVector<f64>]) -> Result<DVector<f64>> {
    let d = x.ncols();
    let eig = (x.transpose() * x).symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let candidates = order
        .iter()
        .map(|&j| eig.eigenvectors.column(j).into_owned())
        .chain((0..d).map(|i| {
            let mut e = DVector::zeros(d);
            e[i] = 1.0;
            e
        }));
    for mut v in candidates {
        gram_schmidt(&mut v, previous);
        let norm = v.norm();
        if norm > 1e-6 {
            return Ok(v / norm);
        }
    }
    Err(Error::numerical("no direction left to complete the basis"))
}

/// PLS via NIPALS on normalised data. Each component maximises the covariance
/// between input and output scores of the deflated data; the input weights are
/// mutually orthonormal.
pub fn nipals_fit(data: &Dataset, d_z: usize) -> Result<PlsBasis> {
    nipals_fit_matrices(data.s(), data.y(), d_z)
}

/// [`nipals_fit`] on already-normalised matrices.
pub fn nipals_fit_matrices(s: &DMatrix<f64>, y: &DMatrix<f64>, d_z: usize) -> Result<PlsBasis> {
    let (n, d_s) = s.shape();
    let d_y = y.ncols();
    if y.nrows() != n {
        return Err(Error::dims("S and Y row counts differ"));
    }
    check_dz(d_z, d_s, n)?;
    let cross = s.tr_mul(y);
    let scale = s.abs().max().max(y.abs().max()).max(1.0);
    if cross.abs().max() <= 1e-14 * scale * scale * n as f64 {
        return Err(Error::numerical(
            "input-output cross-covariance is identically zero",
        ));
    }

    let mut x = s.clone();
    let mut yr = y.clone();
    let mut ws: Vec<DVector<f64>> = Vec::with_capacity(d_z);
    let mut qs: Vec<DVector<f64>> = Vec::with_capacity(d_z);

    for _ in 0..d_z {
        let start = yr
            .column_iter()
            .enumerate()
            .max_by(|a, b| a.1.norm_squared().total_cmp(&b.1.norm_squared()))
            .map(|(j, _)| j)
            .unwrap_or(0);
        let mut u = yr.column(start).into_owned();
        let mut w_prev: Option<DVector<f64>> = None;
        let mut w_found: Option<DVector<f64>> = None;
        let mut q = DVector::zeros(d_y);
        let x_scale = x.abs().max().max(1e-300);

        for _ in 0..NIPALS_MAX_ITER {
            let mut w = x.tr_mul(&u);
            let norm = w.norm();
            if norm <= 1e-12 * x_scale * (n as f64).sqrt() * u.norm().max(1e-300) || norm == 0.0 {
                break;
            }
            w /= norm;
            let t = &x * &w;
            q = yr.tr_mul(&t);
            let qn = q.norm();
            if qn > 0.0 {
                q /= qn;
            }
            u = &yr * &q;
            let done = w_prev
                .as_ref()
                .map(|p| (&w - p).norm() < NIPALS_TOL)
                .unwrap_or(false);
            w_prev = Some(w.clone());
            w_found = Some(w);
            if done || qn == 0.0 {
                break;
            }
        }

        let mut w = match w_found {
            Some(w) => w,
            None => fallback_direction(&x, &ws)?,
        };
        // clean up round-off; NIPALS weights are orthogonal in exact arithmetic
        gram_schmidt(&mut w, &ws);
        let wn = w.norm();
        if wn < 1e-8 {
            w = fallback_direction(&x, &ws)?;
        } else {
            w /= wn;
        }

        let t = &x * &w;
        let tt = t.norm_squared();
        if tt > 0.0 {
            let p = x.tr_mul(&t) / tt;
            x -= &t * p.transpose();
            let c = yr.tr_mul(&t) / tt;
            yr -= &t * c.transpose();
        }

        if qs.len() < d_y {
            gram_schmidt(&mut q, &qs);
        }
        let qn = q.norm();
        if qn > 1e-12 {
            q /= qn;
        } else {
            q = DVector::zeros(d_y);
        }
        ws.push(w);
        qs.push(q);
    }

    let mut w = DMatrix::from_columns(&ws);
    let mut q = DMatrix::from_columns(&qs);
    // flip q with w so the covariance sign of each component pair is kept
    let before = w.clone();
    fix_column_signs(&mut w);
    for j in 0..d_z {
        if before.column(j).dot(&w.column(j)) < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    PlsBasis::from_parts(w, q)
}

/// Principal directions of the normalised inputs.
#[derive(Debug, Clone)]
pub struct PcaBasis {
    /// Top-`d_z` eigenvectors, d_s × d_z, orthonormal and sign-fixed.
    pub w: DMatrix<f64>,
    /// All covariance eigenvalues in decreasing order.
    pub variances: Vec<f64>,
}

impl PcaBasis {
    pub fn explained_variance(&self) -> f64 {
        self.variances[..self.w.ncols()].iter().sum()
    }
}

pub fn pca_fit(data: &Dataset, d_z: usize) -> Result<PcaBasis> {
    pca_fit_matrix(data.s(), d_z)
}

pub fn pca_fit_matrix(s: &DMatrix<f64>, d_z: usize) -> Result<PcaBasis> {
    let (n, d_s) = s.shape();
    check_dz(d_z, d_s, n)?;
    let cov = s.tr_mul(s) / (n as f64 - 1.0);
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d_s).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let cols: Vec<DVector<f64>> = order[..d_z]
        .iter()
        .map(|&j| eig.eigenvectors.column(j).into_owned())
        .collect();
    let mut w = DMatrix::from_columns(&cols);
    fix_column_signs(&mut w);
    Ok(PcaBasis {
        w,
        variances: order.iter().map(|&j| eig.eigenvalues[j]).collect(),
    })
}
