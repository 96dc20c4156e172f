//! Small dense linear-algebra and RNG helpers shared by the model modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Rng64 = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a base seed with a stream tag and an index (splitmix64 finaliser),
/// so that every random consumer in a run gets its own reproducible stream.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    // column-major fill order is part of the reproducibility contract
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn standard_normal_vector<R: Rng + ?Sized>(len: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Cholesky factorisation with escalating diagonal jitter.
///
/// Tries the matrix as given, then adds `start, 10*start, ...` up to `max`
/// times the mean absolute diagonal (or 1 when the diagonal vanishes).
/// Returns the factor and the absolute jitter that was added.
pub fn cholesky_jittered(
    m: &DMatrix<f64>,
    start: f64,
    max: f64,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if m.nrows() != m.ncols() {
        return Err(Error::dims("cholesky of a non-square matrix"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("cholesky input has non-finite entries"));
    }
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok((c, 0.0));
    }
    let n = m.nrows();
    let diag_scale = if n == 0 {
        1.0
    } else {
        let mean = m.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n as f64;
        if mean > 0.0 {
            mean
        } else {
            1.0
        }
    };
    let mut rel = start;
    while rel <= max * (1.0 + 1e-12) {
        let jitter = rel * diag_scale;
        let mut a = m.clone();
        for i in 0..n {
            a[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(a) {
            return Ok((c, jitter));
        }
        rel *= 10.0;
    }
    Err(Error::numerical(format!(
        "matrix not positive definite after jitter up to {max:e}"
    )))
}

/// Flips each column so that its largest-magnitude entry is positive.
pub fn fix_column_signs(w: &mut DMatrix<f64>) {
    for mut col in w.column_iter_mut() {
        let mut best = 0.0f64;
        for v in col.iter() {
            if v.abs() > best.abs() {
                best = *v;
            }
        }
        if best < 0.0 {
            col.neg_mut();
        }
    }
}

/// `max |WᵀW − I|` over all entries.
pub fn orthonormality_error(w: &DMatrix<f64>) -> f64 {
    let g = w.transpose() * w;
    let mut worst = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// Lower factor `L` with `L Lᵀ = m` for a symmetric PSD matrix. Falls back to a
/// symmetric eigendecomposition (negative eigenvalues clamped to zero) when the
/// matrix is singular, so that degenerate covariances are still usable.
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return c.l();
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut scaled = eig.eigenvectors.clone();
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        scaled.column_mut(j).scale_mut(s);
    }
    scaled
}

/// Thin-QR orthonormal factor of a seeded Gaussian matrix, used to initialise
/// loadings. When `cols > rows` the rows are orthonormal instead.
pub fn random_orthonormal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let g = standard_normal_matrix(rows, cols, rng);
    if rows >= cols {
        g.qr().q()
    } else {
        g.transpose().qr().q().transpose()
    }
}
