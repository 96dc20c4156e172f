//! Python bindings: benchmarks, the four optimisation loops, PPLS/PLS/PCA fits,
//! GP regression and the experiment runner.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use redspace::acquisition;
use redspace::benchmarks::{benchmark, benchmark_registry};
use redspace::doe::normalize;
use redspace::experiment::{run_experiment as run_exp, trace_csv, ExperimentConfig};
use redspace::gp::{gp_fit, GpFitConfig, GpModel};
use redspace::optimizer::{self, RunConfig};
use redspace::ppls::{self, EmConfig};
use redspace::reduction;

fn err(e: redspace::Error) -> PyErr {
    match e {
        redspace::Error::Numerical(_) | redspace::Error::Io(_) | redspace::Error::Evaluation { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Ok(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Python dict (or None) to a JSON value via the json module.
fn to_json(py: Python<'_>, obj: Option<&Bound<'_, PyDict>>) -> PyResult<serde_json::Value> {
    let Some(obj) = obj else {
        return Ok(serde_json::Value::Object(Default::default()));
    };
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn from_json<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Names, dimensions and reference values of the built-in problems.
#[pyfunction]
fn list_benchmarks(py: Python<'_>) -> PyResult<Vec<Bound<'_, PyDict>>> {
    benchmark_registry()
        .into_iter()
        .map(|b| {
            let d = PyDict::new(py);
            d.set_item("name", b.name)?;
            d.set_item("d_s", b.problem.d_s())?;
            d.set_item("d_y", b.problem.d_y)?;
            d.set_item("lower", b.problem.domain.lower().to_vec())?;
            d.set_item("upper", b.problem.domain.upper().to_vec())?;
            d.set_item("reported_optimum", b.reported_optimum)?;
            d.set_item("target", b.target)?;
            Ok(d)
        })
        .collect()
}

/// Objective followed by constraint values of a benchmark at `s`.
#[pyfunction]
fn evaluate(name: &str, s: Vec<f64>) -> PyResult<Vec<f64>> {
    benchmark(name).and_then(|b| b.problem.evaluate(&s, 0)).map_err(err)
}

/// Record of one optimisation run.
#[pyclass(module = "redspace", frozen)]
struct Trace {
    inner: optimizer::Trace,
}

#[pymethods]
impl Trace {
    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method.label()
    }
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
    #[getter]
    fn n_init(&self) -> usize {
        self.inner.n_init
    }
    /// `(k, s, y, feasible, incumbent)` per evaluation.
    #[getter]
    #[allow(clippy::type_complexity)]
    fn rows(&self) -> Vec<(usize, Vec<f64>, Vec<f64>, bool, Option<f64>)> {
        self.inner
            .rows
            .iter()
            .map(|r| (r.k, r.s.clone(), r.y.clone(), r.feasible, r.incumbent))
            .collect()
    }
    #[getter]
    fn final_incumbent(&self) -> Option<f64> {
        self.inner.final_incumbent()
    }
    /// `(value, s, k, feasible)` of the best observation.
    fn best_feasible(&self) -> PyResult<(f64, Vec<f64>, usize, bool)> {
        let b = self.inner.best_feasible().map_err(err)?;
        Ok((b.value, b.s, b.k, b.feasible))
    }
    fn iterations_to_target(&self, target: f64) -> Option<usize> {
        self.inner.iterations_to_target(target)
    }
    fn to_csv(&self) -> String {
        trace_csv(&self.inner)
    }
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }
    fn __len__(&self) -> usize {
        self.inner.rows.len()
    }
    fn __repr__(&self) -> String {
        format!(
            "Trace(method={}, seed={}, evaluations={}, final_incumbent={:?})",
            self.inner.method,
            self.inner.seed,
            self.inner.rows.len(),
            self.inner.final_incumbent()
        )
    }
}

/// Runs one optimisation loop on a built-in benchmark. `config` takes the
/// same keys as the `run` section of an experiment file, e.g.
/// `{"method": "PPLS-BO", "d_z": 2, "n_k": 20}`.
#[pyfunction]
#[pyo3(signature = (benchmark_name, config=None))]
fn run(py: Python<'_>, benchmark_name: &str, config: Option<&Bound<'_, PyDict>>) -> PyResult<Trace> {
    let rc: RunConfig = serde_json::from_value(to_json(py, config)?)
        .map_err(|e| PyValueError::new_err(format!("invalid run configuration: {e}")))?;
    let problem = benchmark(benchmark_name).map_err(err)?.problem;
    let result = py.detach(|| optimizer::run(&problem, &rc));
    result
        .map(|inner| Trace { inner })
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Runs an experiment described by a dict in the experiment-file format and
/// returns the manifest.
#[pyfunction]
#[pyo3(signature = (config, out, parallelism=1, seed_offset=0))]
fn run_experiment<'py>(
    py: Python<'py>,
    config: &Bound<'py, PyDict>,
    out: PathBuf,
    parallelism: usize,
    seed_offset: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = ExperimentConfig::from_value(&to_json(py, Some(config))?).map_err(err)?;
    let report = py
        .detach(|| run_exp(&cfg, &out, parallelism, seed_offset))
        .map_err(err)?;
    from_json(py, &report.manifest)
}

/// Fitted probabilistic PLS model on normalised data.
#[pyclass(module = "redspace", frozen)]
struct PplsModel {
    inner: ppls::PplsModel,
    elbo_trace: Vec<f64>,
}

#[pymethods]
impl PplsModel {
    /// Fits by EM after normalising the columns of `s` and `y`.
    #[staticmethod]
    #[pyo3(signature = (s, y, d_z, n_t=100, seed=0))]
    fn fit(s: Vec<Vec<f64>>, y: Vec<Vec<f64>>, d_z: usize, n_t: usize, seed: u64) -> PyResult<Self> {
        let data = normalize(&matrix(s)?, &matrix(y)?).map_err(err)?;
        let (inner, report) = ppls::em_fit(&data, &EmConfig::new(d_z, n_t, seed), None).map_err(err)?;
        Ok(Self {
            inner,
            elbo_trace: report.elbo_trace,
        })
    }
    #[getter]
    fn w(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.w)
    }
    #[getter]
    fn q(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.q)
    }
    #[getter]
    fn sigma_s(&self) -> Vec<f64> {
        self.inner.sigma_s.iter().copied().collect()
    }
    #[getter]
    fn sigma_y(&self) -> Vec<f64> {
        self.inner.sigma_y.iter().copied().collect()
    }
    #[getter]
    fn elbo_trace(&self) -> Vec<f64> {
        self.elbo_trace.clone()
    }
    /// Log evidence of already-normalised data.
    fn log_evidence(&self, s: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> PyResult<f64> {
        ppls::log_evidence(&self.inner, &matrix(s)?, &matrix(y)?).map_err(err)
    }
    /// Posterior mean and covariance of the latent for one normalised pair.
    fn latent_posterior(&self, y: Vec<f64>, s: Vec<f64>) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let p = ppls::latent_posterior(&self.inner, &y, &s).map_err(err)?;
        Ok((p.mu.iter().copied().collect(), rows(&p.sigma)))
    }
}

/// PLS input weights (d_s × d_z) from NIPALS on normalised data.
#[pyfunction]
fn pls_basis(s: Vec<Vec<f64>>, y: Vec<Vec<f64>>, d_z: usize) -> PyResult<Vec<Vec<f64>>> {
    let data = normalize(&matrix(s)?, &matrix(y)?).map_err(err)?;
    reduction::nipals_fit(&data, d_z).map(|b| rows(&b.w)).map_err(err)
}

/// Leading principal directions (d_s × d_z) of the normalised inputs.
#[pyfunction]
fn pca_basis(s: Vec<Vec<f64>>, d_z: usize) -> PyResult<Vec<Vec<f64>>> {
    let s = matrix(s)?;
    let y = DMatrix::zeros(s.nrows(), 1);
    let data = normalize(&s, &y).map_err(err)?;
    reduction::pca_fit(&data, d_z).map(|b| rows(&b.w)).map_err(err)
}

/// Zero-mean GP with an ARD squared-exponential kernel.
#[pyclass(module = "redspace", frozen)]
struct GaussianProcess {
    inner: GpModel,
}

#[pymethods]
impl GaussianProcess {
    /// Maximises the log marginal likelihood from `restarts` starting points.
    #[staticmethod]
    #[pyo3(signature = (z, y, restarts=2, seed=0))]
    fn fit(z: Vec<Vec<f64>>, y: Vec<f64>, restarts: usize, seed: u64) -> PyResult<Self> {
        let cfg = GpFitConfig {
            restarts,
            seed,
            ..Default::default()
        };
        let inner = gp_fit(&matrix(z)?, &DVector::from_vec(y), &cfg).map_err(err)?;
        Ok(Self { inner })
    }
    /// Predictive means and variances at each row of `z`.
    fn predict(&self, z: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let p = self.inner.predict(&matrix(z)?).map_err(err)?;
        Ok((p.mean.iter().copied().collect(), p.variance.iter().copied().collect()))
    }
    fn log_marginal_likelihood(&self) -> f64 {
        self.inner.log_marginal_likelihood()
    }
    /// `(sigma_f, lengthscales, sigma_y)`.
    #[getter]
    fn hyperparameters(&self) -> (f64, Vec<f64>, f64) {
        let h = self.inner.hyperparameters();
        (h.sigma_f, h.lengthscales.clone(), h.sigma_y)
    }
}

/// Expected improvement for minimisation.
#[pyfunction]
#[pyo3(signature = (mu, sigma, best, xi=0.0))]
fn expected_improvement(mu: f64, sigma: f64, best: f64, xi: f64) -> f64 {
    acquisition::ei(mu, sigma, best, xi)
}

/// Upper confidence bound for minimisation, `−μ + γσ`.
#[pyfunction]
fn ucb(mu: f64, sigma: f64, gamma: f64) -> f64 {
    acquisition::ucb(mu, sigma, gamma)
}

#[pymodule]
#[pyo3(name = "redspace")]
fn redspace_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Trace>()?;
    m.add_class::<PplsModel>()?;
    m.add_class::<GaussianProcess>()?;
    m.add_function(wrap_pyfunction!(list_benchmarks, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(pls_basis, m)?)?;
    m.add_function(wrap_pyfunction!(pca_basis, m)?)?;
    m.add_function(wrap_pyfunction!(expected_improvement, m)?)?;
    m.add_function(wrap_pyfunction!(ucb, m)?)?;
    Ok(())
}
