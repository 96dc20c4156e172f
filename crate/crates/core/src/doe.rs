//! Design-of-experiments: Latin hypercube and two-level Plackett–Burman
//! designs scaled into a box domain, and column normalisation of paired data.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::seeded_rng;

/// Box bounds `lower <= s <= upper` of the original design space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl DesignDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::invalid("design domain needs at least one dimension"));
        }
        if lower.len() != upper.len() {
            return Err(Error::dims(format!(
                "lower has {} entries, upper has {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!(
                    "bound {i}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[lo, hi]^dim`.
    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Inclusive containment check.
    pub fn contains(&self, s: &[f64]) -> bool {
        s.len() == self.dim()
            && s
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn clip(&self, s: &mut [f64]) {
        for (v, (lo, hi)) in s.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    pub(crate) fn check(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.dim() {
            return Err(Error::dims(format!(
                "design has {} entries, domain has {}",
                s.len(),
                self.dim()
            )));
        }
        if !self.contains(s) {
            return Err(Error::OutOfDomain(format!("{s:?}")));
        }
        Ok(())
    }
}

/// Latin hypercube sample of `n` points: in every column each stratum
/// `[k/n, (k+1)/n)` of the unit interval receives exactly one point.
pub fn latin_hypercube(n: usize, domain: &DesignDomain, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::invalid("latin hypercube needs n >= 1"));
    }
    let mut rng = seeded_rng(seed);
    let d = domain.dim();
    let mut out = DMatrix::zeros(n, d);
    let mut strata: Vec<usize> = (0..n).collect();
    for j in 0..d {
        strata.shuffle(&mut rng);
        let (lo, hi) = (domain.lower[j], domain.upper[j]);
        for (i, k) in strata.iter().enumerate() {
            let u: f64 = rng.random();
            let unit = (*k as f64 + u) / n as f64;
            out[(i, j)] = (lo + unit * (hi - lo)).min(hi);
        }
    }
    Ok(out)
}

// Cyclic generator rows of the standard Plackett–Burman designs.
const PB_GENERATORS: [(usize, &str); 6] = [
    (4, "++-"),
    (8, "+++-+--"),
    (12, "++-+++---+-"),
    (16, "++++-+-++--+---"),
    (20, "++--++++-+-+----++-"),
    (24, "+++++-+-++--++--+-+----"),
];

/// Two-level Plackett–Burman design in ±1 coding with `runs` rows and
/// `runs − 1` columns (cyclic shifts of the generator plus an all-minus row).
pub fn plackett_burman_coded(runs: usize) -> Result<Vec<Vec<i8>>> {
    let gen = PB_GENERATORS
        .iter()
        .find(|(n, _)| *n == runs)
        .map(|(_, g)| *g)
        .ok_or_else(|| Error::invalid(format!("no Plackett-Burman generator for {runs} runs")))?;
    let g: Vec<i8> = gen.chars().map(|c| if c == '+' { 1 } else { -1 }).collect();
    let m = g.len();
    let mut rows = Vec::with_capacity(runs);
    for r in 0..m {
        rows.push((0..m).map(|j| g[(j + m - r) % m]).collect());
    }
    rows.push(vec![-1; m]);
    Ok(rows)
}

/// Plackett–Burman screening design over `domain`: the smallest supported run
/// count that is a multiple of 4 strictly above `d_s`, surplus columns dropped,
/// `+` mapped to the upper bound and `−` to the lower bound.
pub fn plackett_burman(domain: &DesignDomain) -> Result<DMatrix<f64>> {
    let d = domain.dim();
    if d < 2 {
        return Err(Error::invalid("Plackett-Burman design needs d_s >= 2"));
    }
    let runs = (d / 4 + 1) * 4;
    let coded = plackett_burman_coded(runs)?;
    Ok(DMatrix::from_fn(runs, d, |i, j| {
        if coded[i][j] > 0 {
            domain.upper[j]
        } else {
            domain.lower[j]
        }
    }))
}

/// Paired design/observation data with per-column normalisation statistics.
///
/// Normalisation subtracts the column mean and divides by the sample standard
/// deviation (n − 1 denominator); constant columns keep scale 1.
#[derive(Debug, Clone)]
pub struct Dataset {
    s: DMatrix<f64>,
    y: DMatrix<f64>,
    mean_s: DVector<f64>,
    scale_s: DVector<f64>,
    mean_y: DVector<f64>,
    scale_y: DVector<f64>,
    s_norm: DMatrix<f64>,
    y_norm: DMatrix<f64>,
}

fn column_stats(m: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = m.nrows() as f64;
    let mut mean = DVector::zeros(m.ncols());
    let mut scale = DVector::from_element(m.ncols(), 1.0);
    for (j, col) in m.column_iter().enumerate() {
        let mu = col.sum() / n;
        let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        mean[j] = mu;
        // relative threshold so that columns equal up to round-off count as constant
        if sd > 1e-12 * (1.0 + mu.abs()) {
            scale[j] = sd;
        }
    }
    (mean, scale)
}

fn apply(m: &DMatrix<f64>, mean: &DVector<f64>, scale: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| (m[(i, j)] - mean[j]) / scale[j])
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.s.nrows()
    }
    pub fn d_s(&self) -> usize {
        self.s.ncols()
    }
    pub fn d_y(&self) -> usize {
        self.y.ncols()
    }
    pub fn s_raw(&self) -> &DMatrix<f64> {
        &self.s
    }
    pub fn y_raw(&self) -> &DMatrix<f64> {
        &self.y
    }
    /// Normalised designs, `n × d_s`.
    pub fn s(&self) -> &DMatrix<f64> {
        &self.s_norm
    }
    /// Normalised observations, `n × d_y`.
    pub fn y(&self) -> &DMatrix<f64> {
        &self.y_norm
    }
    pub fn mean_s(&self) -> &DVector<f64> {
        &self.mean_s
    }
    pub fn scale_s(&self) -> &DVector<f64> {
        &self.scale_s
    }
    pub fn mean_y(&self) -> &DVector<f64> {
        &self.mean_y
    }
    pub fn scale_y(&self) -> &DVector<f64> {
        &self.scale_y
    }

    pub fn forward_s(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .enumerate()
            .map(|(j, v)| (v - self.mean_s[j]) / self.scale_s[j])
            .collect()
    }

    pub fn inverse_s(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .enumerate()
            .map(|(j, v)| self.mean_s[j] + self.scale_s[j] * v)
            .collect()
    }

    pub fn forward_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .enumerate()
            .map(|(j, v)| (v - self.mean_y[j]) / self.scale_y[j])
            .collect()
    }

    pub fn inverse_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .enumerate()
            .map(|(j, v)| self.mean_y[j] + self.scale_y[j] * v)
            .collect()
    }
}

/// Stores the raw data and normalises each column.
pub fn normalize(s: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Dataset> {
    if s.nrows() != y.nrows() {
        return Err(Error::dims(format!(
            "S has {} rows, Y has {}",
            s.nrows(),
            y.nrows()
        )));
    }
    if s.nrows() < 2 {
        return Err(Error::invalid("normalisation needs at least 2 rows"));
    }
    if s.ncols() == 0 || y.ncols() == 0 {
        return Err(Error::invalid("S and Y need at least one column"));
    }
    let (mean_s, scale_s) = column_stats(s);
    let (mean_y, scale_y) = column_stats(y);
    let s_norm = apply(s, &mean_s, &scale_s);
    let y_norm = apply(y, &mean_y, &scale_y);
    Ok(Dataset {
        s: s.clone(),
        y: y.clone(),
        mean_s,
        scale_s,
        mean_y,
        scale_y,
        s_norm,
        y_norm,
    })
}
