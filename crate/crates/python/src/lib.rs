//! Python bindings: datasets, simulation, the penalized cut-point fit, the
//! multiple-testing baselines and the evaluation metrics.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use binacox::baselines::{mt_detect, Correction, MtConfig, ScanGrid};
use binacox::pipeline::{fit_binacox, BinacoxOptions};
use binacox::simulation::{simulate as run_simulation, GroundTruth, SimConfig};
use binacox::{fit_bins, CutPointModel, Error, SurvivalDataset};

fn to_py(e: Error) -> PyErr {
    match e {
        e if matches!(e, Error::InvalidArgument(_)) || e.is_data_error() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Right-censored survival data with continuous features.
#[pyclass(name = "Dataset", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    inner: SurvivalDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (columns, times, events, names=None))]
    fn new(columns: Vec<Vec<f64>>, times: Vec<f64>, events: Vec<bool>, names: Option<Vec<String>>) -> PyResult<Self> {
        let inner = match names {
            Some(n) => SurvivalDataset::with_names(columns, n, times, events),
            None => SurvivalDataset::new(columns, times, events),
        }
        .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read_csv(path: &str) -> PyResult<Self> {
        Ok(Self { inner: SurvivalDataset::read_csv(path).map_err(to_py)? })
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        self.inner.write_csv(path).map_err(to_py)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names().to_vec()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times().to_vec()
    }

    #[getter]
    fn events(&self) -> Vec<bool> {
        self.inner.events().to_vec()
    }

    fn column(&self, j: usize) -> PyResult<Vec<f64>> {
        if j >= self.inner.p() {
            return Err(PyValueError::new_err(format!("column {j} out of range")));
        }
        Ok(self.inner.column(j).to_vec())
    }

    fn censoring_rate(&self) -> f64 {
        self.inner.censoring_rate()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, p={})", self.inner.n(), self.inner.p())
    }
}

/// True cut-points and block coefficients of a simulated cohort.
#[pyclass(name = "GroundTruth", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyGroundTruth {
    inner: GroundTruth,
}

#[pymethods]
impl PyGroundTruth {
    #[getter]
    fn mu_star(&self) -> Vec<Vec<f64>> {
        self.inner.mu_star.clone()
    }

    #[getter]
    fn beta_star(&self) -> Vec<Vec<f64>> {
        self.inner.beta_star.clone()
    }

    #[getter]
    fn sparse_set(&self) -> Vec<usize> {
        self.inner.sparse_set.clone()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }
}

/// Per-feature cut-points in the format shared by every detection method.
#[pyclass(name = "CutPoints", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyCutPoints {
    inner: CutPointModel,
}

#[pymethods]
impl PyCutPoints {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: CutPointModel::from_json(text).map_err(to_py)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[getter]
    fn method(&self) -> String {
        self.inner.method.clone()
    }

    #[getter]
    fn cutpoints(&self) -> Vec<Vec<f64>> {
        self.inner.cutpoints()
    }

    #[getter]
    fn k_hat(&self) -> Vec<usize> {
        self.inner.k_hat()
    }
}

/// Outcome of [`fit`]: the penalty used and the detected cut-points.
#[pyclass(name = "Model", frozen)]
pub struct PyModel {
    #[pyo3(get)]
    gamma: f64,
    #[pyo3(get)]
    objective: f64,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    coefficients: Vec<f64>,
    #[pyo3(get)]
    cutpoints: PyCutPoints,
    /// `(gamma, mean score, std error)` per grid value when γ was selected.
    #[pyo3(get)]
    cv: Option<Vec<(f64, f64, f64)>>,
}

#[pyfunction]
#[pyo3(signature = (n=1000, p=50, rho=0.5, k_star=2, nu=2.0, shape=0.1, censoring_rate=0.3, sparse_fraction=0.2, seed=0))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    n: usize,
    p: usize,
    rho: f64,
    k_star: usize,
    nu: f64,
    shape: f64,
    censoring_rate: f64,
    sparse_fraction: f64,
    seed: u64,
) -> PyResult<(PyDataset, PyGroundTruth)> {
    let config = SimConfig { n, p, rho, k_star, nu, shape, censoring_rate, sparse_fraction, seed };
    let sim = run_simulation(&config).map_err(to_py)?;
    Ok((PyDataset { inner: sim.dataset }, PyGroundTruth { inner: sim.truth }))
}

/// Penalized cut-point detection; `gamma=None` selects it by cross-validation.
#[pyfunction]
#[pyo3(signature = (dataset, bins=50, gamma=None, folds=10, grid_size=30, seed=0))]
fn fit(
    py: Python<'_>,
    dataset: &PyDataset,
    bins: usize,
    gamma: Option<f64>,
    folds: usize,
    grid_size: usize,
    seed: u64,
) -> PyResult<PyModel> {
    let opts = BinacoxOptions { bins, gamma, folds, grid_size, seed, ..Default::default() };
    let ds = dataset.inner.clone();
    let m = py.detach(move || fit_binacox(&ds, &opts)).map_err(to_py)?;
    let cv = m.cv.as_ref().map(|r| {
        r.gammas.iter().zip(&r.mean_scores).zip(&r.std_errors).map(|((g, s), e)| (*g, *s, *e)).collect()
    });
    Ok(PyModel {
        gamma: m.gamma,
        objective: m.fit.objective,
        iterations: m.fit.iterations,
        coefficients: m.fit.beta.values().to_vec(),
        cutpoints: PyCutPoints { inner: m.cutpoints },
        cv,
    })
}

/// Single cut-point per feature by maximally selected log-rank statistics.
#[pyfunction]
#[pyo3(signature = (dataset, method="mt-b", grid="all", bins=50, alpha=0.05))]
fn baseline(dataset: &PyDataset, method: &str, grid: &str, bins: usize, alpha: f64) -> PyResult<PyCutPoints> {
    let correction = match method {
        "mt-b" => Correction::Bonferroni,
        "mt-ls" => Correction::LausenSchumacher,
        other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
    };
    let grid: ScanGrid = grid.parse().map_err(to_py)?;
    let scheme = match grid {
        ScanGrid::Scheme => Some(fit_bins(&dataset.inner, bins).map_err(to_py)?),
        ScanGrid::All => None,
    };
    let result = mt_detect(&dataset.inner, scheme.as_ref(), MtConfig { grid, correction, alpha }).map_err(to_py)?;
    Ok(PyCutPoints { inner: result.model })
}

/// Weighted total-variation prox; `weights[0]` must be 0.
#[pyfunction]
fn prox_tv(values: Vec<f64>, weights: Vec<f64>, step: f64) -> PyResult<Vec<f64>> {
    binacox::prox::prox_tv_weighted(&values, &weights, step).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (risks, times, events, tau=None))]
fn c_index(risks: Vec<f64>, times: Vec<f64>, events: Vec<bool>, tau: Option<f64>) -> PyResult<f64> {
    Ok(binacox::metrics::c_index(&risks, &times, &events, tau).map_err(to_py)?.c_index)
}

/// Mean Hausdorff distance over features with both true and detected
/// cut-points; `None` when there is no such feature.
#[pyfunction]
fn m1(truth: Vec<Vec<f64>>, detected: Vec<Vec<f64>>) -> PyResult<Option<f64>> {
    binacox::metrics::m1(&truth, &detected).map_err(to_py)
}

#[pyfunction]
fn m2(k_hat: Vec<usize>, sparse_set: Vec<usize>) -> PyResult<f64> {
    binacox::metrics::m2(&k_hat, &sparse_set).map_err(to_py)
}

#[pymodule]
fn binacox_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyGroundTruth>()?;
    m.add_class::<PyCutPoints>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(baseline, m)?)?;
    m.add_function(wrap_pyfunction!(prox_tv, m)?)?;
    m.add_function(wrap_pyfunction!(c_index, m)?)?;
    m.add_function(wrap_pyfunction!(m1, m)?)?;
    m.add_function(wrap_pyfunction!(m2, m)?)?;
    Ok(())
}
