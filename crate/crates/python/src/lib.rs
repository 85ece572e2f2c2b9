//! Python bindings. Matrices cross the boundary as lists of rows.

use gp::bench::{self, Waveform};
use gp::model_file;
use gp::models::{fit_prior_mean, optimize_hypervariances, OptimizeOptions};
use gp::passivity::{self, EnforceMode};
use gp::{BoxDomain, Dataset, Error, FittedModel, Hypervariances, ModelKernel, ModelKind, PriorMean};
use nalgebra::DMatrix;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Input(_) | Error::Parse { .. } | Error::Unsupported(_) => PyValueError::new_err(e.to_string()),
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> PyResult<DMatrix<f64>> {
    let n = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err(format!("{what}: rows have differing lengths")));
    }
    Ok(DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn dataset(velocities: Vec<Vec<f64>>, torques: Vec<Vec<f64>>) -> PyResult<Dataset> {
    Dataset::from_rows(&velocities, &torques).map_err(py_err)
}

fn parse_kind(kind: &str) -> PyResult<ModelKind> {
    kind.parse().map_err(py_err)
}

/// An `N`-vector (ARD / diagonal) or an `N x N` matrix (full).
#[derive(FromPyObject)]
enum HvArg {
    Matrix(Vec<Vec<f64>>),
    Vector(Vec<f64>),
}

impl HvArg {
    fn into_hv(self) -> PyResult<Hypervariances> {
        Ok(match self {
            HvArg::Matrix(rows) => Hypervariances::Full(rows_to_matrix(&rows, "hypervariances")?),
            HvArg::Vector(v) => Hypervariances::Diag(v),
        })
    }
}

fn hv_to_py(py: Python<'_>, hv: &Hypervariances) -> PyResult<Py<PyAny>> {
    Ok(match hv {
        Hypervariances::Full(s) => matrix_to_rows(s).into_pyobject(py)?.into_any().unbind(),
        Hypervariances::Diag(v) => v.clone().into_pyobject(py)?.into_any().unbind(),
    })
}

/// A fitted ARD-GP, Diag-D-GP or Full-D-GP model.
#[pyclass(name = "Model", module = "passive_gp", frozen)]
struct PyModel {
    inner: FittedModel,
}

#[pymethods]
impl PyModel {
    /// Fits with fixed hyperparameters. Structured kinds get a least-squares
    /// prior mean unless `prior_mean` is given; ARD-GP uses a zero mean.
    #[staticmethod]
    #[pyo3(signature = (kind, velocities, torques, lengthscales, noise_variance, hypervariances, prior_mean=None))]
    fn fit(
        kind: &str,
        velocities: Vec<Vec<f64>>,
        torques: Vec<Vec<f64>>,
        lengthscales: Vec<f64>,
        noise_variance: f64,
        hypervariances: HvArg,
        prior_mean: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let kind = parse_kind(kind)?;
        let data = dataset(velocities, torques)?;
        let prior = match (kind.is_structured(), prior_mean) {
            (false, _) => PriorMean::zeros(data.dim()),
            (true, Some(p)) => PriorMean::new(p).map_err(py_err)?,
            (true, None) => fit_prior_mean(&data),
        };
        let kernel = ModelKernel::build(kind, &lengthscales, &hypervariances.into_hv()?).map_err(py_err)?;
        Ok(PyModel { inner: FittedModel::fit(kernel, prior, &data, noise_variance).map_err(py_err)? })
    }

    /// Searches hypervariances on a validation set; `constrained` keeps
    /// every candidate inside the passivity bound.
    #[staticmethod]
    #[pyo3(signature = (kind, train_velocities, train_torques, val_velocities, val_torques, lengthscales, noise_variance, budget=60, constrained=false))]
    #[allow(clippy::too_many_arguments)]
    fn optimize(
        kind: &str,
        train_velocities: Vec<Vec<f64>>,
        train_torques: Vec<Vec<f64>>,
        val_velocities: Vec<Vec<f64>>,
        val_torques: Vec<Vec<f64>>,
        lengthscales: Vec<f64>,
        noise_variance: f64,
        budget: usize,
        constrained: bool,
    ) -> PyResult<Self> {
        let kind = parse_kind(kind)?;
        let train = dataset(train_velocities, train_torques)?;
        let val = dataset(val_velocities, val_torques)?;
        let opts = OptimizeOptions { budget, constrained, ..Default::default() };
        let res = optimize_hypervariances(kind, &train, &val, &lengthscales, noise_variance, &opts).map_err(py_err)?;
        Ok(PyModel { inner: FittedModel::fit(res.kernel, res.prior_mean, &train, noise_variance).map_err(py_err)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyModel { inner: model_file::load(path).map_err(py_err)? })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(PyModel { inner: model_file::from_text(text).map_err(py_err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        model_file::save(&self.inner, path).map_err(py_err)
    }

    fn to_text(&self) -> String {
        model_file::to_text(&self.inner)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().name()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn noise_variance(&self) -> f64 {
        self.inner.noise_variance()
    }

    #[getter]
    fn prior_mean(&self) -> Vec<f64> {
        self.inner.prior_mean().coefficients().to_vec()
    }

    #[getter]
    fn hypervariances(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        hv_to_py(py, &self.inner.kernel().hypervariances())
    }

    fn predict_torque(&self, q: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.predict_torque(&q).map_err(py_err)?.iter().copied().collect())
    }

    fn predict_torques(&self, velocities: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let q = rows_to_matrix(&velocities, "velocities")?;
        Ok(matrix_to_rows(&self.inner.predict_torques(&q).map_err(py_err)?))
    }

    fn predict_damping(&self, q: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        Ok(matrix_to_rows(&self.inner.predict_damping(&q).map_err(py_err)?))
    }

    fn dissipated_power(&self, q: Vec<f64>) -> PyResult<f64> {
        passivity::dissipated_power(&self.inner, &q).map_err(py_err)
    }

    /// `(evaluated, min_power, violation_count)` over `samples` uniform
    /// points plus the corners of the box.
    #[pyo3(signature = (lower, upper, samples=10_000, seed=0))]
    fn passivity_sweep(&self, lower: Vec<f64>, upper: Vec<f64>, samples: usize, seed: u64) -> PyResult<(usize, f64, usize)> {
        let domain = BoxDomain::new(lower, upper).map_err(py_err)?;
        let r = passivity::passivity_sweep(&self.inner, &domain, samples, seed).map_err(py_err)?;
        Ok((r.evaluated, r.min_power, r.violation_count))
    }

    fn __repr__(&self) -> String {
        format!("Model(kind={:?}, dim={}, samples={})", self.inner.kind().name(), self.inner.dim(), self.inner.train_data().len())
    }
}

/// Least-squares nonnegative prior mean coefficients.
#[pyfunction]
fn fit_prior(velocities: Vec<Vec<f64>>, torques: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    Ok(fit_prior_mean(&dataset(velocities, torques)?).coefficients().to_vec())
}

/// `(c, feasible, margin)` of the passivity bound.
#[pyfunction]
fn compute_bound(
    velocities: Vec<Vec<f64>>,
    torques: Vec<Vec<f64>>,
    prior_mean: Vec<f64>,
    noise_variance: f64,
    hypervariances: HvArg,
) -> PyResult<(f64, bool, f64)> {
    let data = dataset(velocities, torques)?;
    let prior = PriorMean::new(prior_mean).map_err(py_err)?;
    let bound = passivity::compute_bound(&data, &prior, noise_variance, &hypervariances.into_hv()?).map_err(py_err)?;
    Ok(match bound.hypervariances {
        Hypervariances::Full(_) => {
            let c = passivity::check_bound_full(&bound);
            (bound.c, c.feasible, c.margin)
        }
        Hypervariances::Diag(_) => {
            let c = passivity::check_bound_diag(&bound).map_err(py_err)?;
            (bound.c, c.feasible, c.per_dim_margins.iter().copied().fold(f64::INFINITY, f64::min))
        }
    })
}

/// `(hypervariances, noise_variance, alpha)` satisfying the bound. `mode` is
/// "scale" or "noise".
#[pyfunction]
#[pyo3(signature = (velocities, torques, prior_mean, noise_variance, hypervariances, mode="scale"))]
fn enforce_bound(
    py: Python<'_>,
    velocities: Vec<Vec<f64>>,
    torques: Vec<Vec<f64>>,
    prior_mean: Vec<f64>,
    noise_variance: f64,
    hypervariances: HvArg,
    mode: &str,
) -> PyResult<(Py<PyAny>, f64, f64)> {
    let mode = match mode {
        "scale" => EnforceMode::ScaleHypervariances,
        "noise" => EnforceMode::RaiseNoise,
        other => return Err(PyValueError::new_err(format!("mode must be \"scale\" or \"noise\", got {other:?}"))),
    };
    let data = dataset(velocities, torques)?;
    let prior = PriorMean::new(prior_mean).map_err(py_err)?;
    let bound = passivity::compute_bound(&data, &prior, noise_variance, &hypervariances.into_hv()?).map_err(py_err)?;
    let e = passivity::enforce_bound(&bound, mode).map_err(py_err)?;
    Ok((hv_to_py(py, &e.hypervariances)?, e.noise_variance, e.alpha))
}

#[pyfunction]
fn builtin_systems() -> Vec<&'static str> {
    bench::builtin_ids()
}

/// `(velocities, torques)` from a builtin system. `waveform` is "uniform"
/// or "periodic".
#[pyfunction]
#[pyo3(signature = (system, count, noise_std=0.0, seed=0, waveform="uniform"))]
fn generate_dataset(system: &str, count: usize, noise_std: f64, seed: u64, waveform: &str) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let sys = bench::system_by_id(system).map_err(py_err)?;
    let w = match waveform {
        "uniform" => Waveform::Uniform,
        "periodic" => Waveform::Periodic { offset: 0.0 },
        other => return Err(PyValueError::new_err(format!("unknown waveform {other:?}"))),
    };
    let q = bench::sample_trajectory(sys.domain(), count, seed, w).map_err(py_err)?;
    let d = bench::generate_dataset(&sys, &q, noise_std, seed).map_err(py_err)?;
    Ok((matrix_to_rows(d.velocities()), matrix_to_rows(d.torques())))
}

/// `(lower, upper)` of a builtin system's velocity box.
#[pyfunction]
fn system_domain(system: &str) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let sys = bench::system_by_id(system).map_err(py_err)?;
    Ok((sys.domain().lower().to_vec(), sys.domain().upper().to_vec()))
}

/// `(per_output, aggregate)` normalized mean squared error.
#[pyfunction]
fn nmse(predictions: Vec<Vec<f64>>, truth: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, f64)> {
    let r = bench::nmse(&rows_to_matrix(&predictions, "predictions")?, &rows_to_matrix(&truth, "truth")?).map_err(py_err)?;
    Ok((r.per_output, r.aggregate))
}

#[pymodule]
fn passive_gp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(fit_prior, m)?)?;
    m.add_function(wrap_pyfunction!(compute_bound, m)?)?;
    m.add_function(wrap_pyfunction!(enforce_bound, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_systems, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(system_domain, m)?)?;
    m.add_function(wrap_pyfunction!(nmse, m)?)?;
    Ok(())
}
