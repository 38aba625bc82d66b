use chainlab::besov_thermic::{self, Exponent, GridFunction, VGrid};
use chainlab::flow_resolvent::{self, FreezingFrame};
use chainlab::gaussian_proxy::{self, GaussianProxy};
use chainlab::{peano_lab, sde_lab, suite, ChainSpec};
use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: chainlab::Error) -> PyErr {
    match e {
        chainlab::Error::InvalidInput(_) | chainlab::Error::Config(_) | chainlab::Error::Degenerate(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if n == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("expected a non-empty rectangular matrix"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

/// A built-in Kolmogorov chain.
#[pyclass(name = "Chain", frozen)]
struct PyChain {
    spec: ChainSpec,
}

#[pymethods]
impl PyChain {
    #[staticmethod]
    fn linear(n: usize, d: usize) -> PyResult<Self> {
        Ok(PyChain { spec: ChainSpec::linear(n, d).map_err(err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (n, d, beta, amplitude = 0.5))]
    fn holder(n: usize, d: usize, beta: Vec<f64>, amplitude: f64) -> PyResult<Self> {
        Ok(PyChain { spec: ChainSpec::holder(n, d, beta, amplitude).map_err(err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (n, d, amplitude = 0.5))]
    fn lipschitz(n: usize, d: usize, amplitude: f64) -> PyResult<Self> {
        Ok(PyChain { spec: ChainSpec::lipschitz(n, d, amplitude).map_err(err)? })
    }

    #[staticmethod]
    fn peano(n: usize, d: usize, beta: Vec<f64>) -> PyResult<Self> {
        Ok(PyChain { spec: ChainSpec::peano(n, d, beta).map_err(err)? })
    }

    #[staticmethod]
    fn smooth(n: usize, d: usize) -> PyResult<Self> {
        Ok(PyChain { spec: ChainSpec::smooth(n, d).map_err(err)? })
    }

    #[getter]
    fn n(&self) -> usize {
        self.spec.n
    }

    #[getter]
    fn d(&self) -> usize {
        self.spec.d
    }

    #[getter]
    fn eta(&self) -> f64 {
        self.spec.eta
    }

    fn drift(&self, t: f64, x: Vec<f64>) -> PyResult<Vec<f64>> {
        if x.len() != self.spec.nd() {
            return Err(PyValueError::new_err("state has wrong dimension"));
        }
        let mut out = vec![0.0; x.len()];
        self.spec.drift(t, &x, &mut out);
        Ok(out)
    }

    fn above_threshold(&self) -> bool {
        self.spec.above_threshold()
    }

    fn fingerprint(&self) -> String {
        sde_lab::spec_fingerprint(&self.spec)
    }

    fn __repr__(&self) -> String {
        format!("Chain(n={}, d={}, fingerprint={})", self.spec.n, self.spec.d, sde_lab::spec_fingerprint(&self.spec))
    }
}

/// Frozen Gaussian proxy on `[t, s]`.
#[pyclass(name = "Proxy", frozen)]
struct PyProxy {
    inner: GaussianProxy,
}

#[pymethods]
impl PyProxy {
    #[new]
    #[pyo3(signature = (chain, tau, xi, t, s, steps = 400, quad = 32))]
    fn new(chain: &PyChain, tau: f64, xi: Vec<f64>, t: f64, s: f64, steps: usize, quad: usize) -> PyResult<Self> {
        let frame = FreezingFrame::new(&chain.spec, tau, &xi, s, steps).map_err(err)?;
        Ok(PyProxy { inner: GaussianProxy::new(&chain.spec, &frame, t, s, quad).map_err(err)? })
    }

    /// Closed-form proxy of the two-dimensional Kolmogorov chain.
    #[staticmethod]
    fn kolmogorov(t: f64, s: f64) -> PyResult<Self> {
        Ok(PyProxy { inner: gaussian_proxy::kolmogorov_proxy(t, s).map_err(err)? })
    }

    fn covariance(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.cov)
    }

    fn resolvent(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.r)
    }

    fn mean(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check(&x)?;
        Ok(self.inner.mean(&x).iter().copied().collect())
    }

    fn density(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
        self.check(&x)?;
        self.check(&y)?;
        Ok(self.inner.density(&x, &y))
    }

    fn gsp_interval(&self) -> PyResult<(f64, f64)> {
        gaussian_proxy::gsp_condition(&self.inner.cov, self.inner.s - self.inner.t, self.inner.n, self.inner.d).map_err(err)
    }

    #[pyo3(signature = (k, m, x, order = 4))]
    fn moment_identity_defect(&self, k: usize, m: Vec<f64>, x: Vec<f64>, order: usize) -> PyResult<f64> {
        self.inner.moment_identity_defect(k, &m, &x, order).map_err(err)
    }

    #[pyo3(signature = (l, x, h = 0.3, order = 24))]
    fn centering_defect(&self, l: usize, x: Vec<f64>, h: f64, order: usize) -> PyResult<f64> {
        self.inner.centering_defect(l, &x, h, order).map_err(err)
    }
}

impl PyProxy {
    fn check(&self, x: &[f64]) -> PyResult<()> {
        if x.len() != self.inner.nd() {
            return Err(PyValueError::new_err("state has wrong dimension"));
        }
        Ok(())
    }
}

#[pyfunction]
#[pyo3(signature = (chain, tau, xi, t, s, tol = 1e-10))]
fn resolvent(chain: &PyChain, tau: f64, xi: Vec<f64>, t: f64, s: f64, tol: f64) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&flow_resolvent::resolvent(&chain.spec, tau, &xi, t, s, tol).map_err(err)?))
}

#[pyfunction]
#[pyo3(signature = (chain, t, s, xi, tol = 1e-10))]
fn flow(chain: &PyChain, t: f64, s: f64, xi: Vec<f64>, tol: f64) -> PyResult<Vec<f64>> {
    flow_resolvent::flow(&chain.spec, t, s, &xi, tol).map_err(err)
}

#[pyfunction]
fn gsp_condition(cov: Vec<Vec<f64>>, dt: f64, n: usize, d: usize) -> PyResult<(f64, f64)> {
    gaussian_proxy::gsp_condition(&matrix(&cov)?, dt, n, d).map_err(err)
}

type Paths = Vec<Vec<Vec<f64>>>;

/// Returns `(times, paths)` with `paths[p][k]` the state at `times[k]`.
#[pyfunction]
fn simulate_ensemble(chain: &PyChain, x0: Vec<f64>, horizon: f64, steps: usize, paths: usize, seed: u64) -> PyResult<(Vec<f64>, Paths)> {
    let e = sde_lab::simulate_ensemble(&chain.spec, &x0, horizon, steps, paths, seed).map_err(err)?;
    let out = (0..e.m).map(|p| e.path(p).chunks(e.nd).map(|c| c.to_vec()).collect()).collect();
    Ok((e.times, out))
}

/// Fitted exponent of the level-`level` standard deviation against time.
#[pyfunction]
#[pyo3(signature = (chain, level, times, paths = 10000, steps = 2000, seed = 1))]
fn fluctuation_exponent(chain: &PyChain, level: usize, times: Vec<f64>, paths: usize, steps: usize, seed: u64) -> PyResult<f64> {
    Ok(sde_lab::fluctuation_scaling(&chain.spec, level, &times, paths, steps, seed).map_err(err)?.exponent)
}

#[pyfunction]
#[pyo3(signature = (values, spacing, alpha, p = f64::INFINITY, q = f64::INFINITY, m = None, origin = 0.0, decays = true))]
#[allow(clippy::too_many_arguments)]
fn thermic_norm<'py>(
    py: Python<'py>,
    values: Vec<f64>,
    spacing: f64,
    alpha: f64,
    p: f64,
    q: f64,
    m: Option<usize>,
    origin: f64,
    decays: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let f = GridFunction::new(origin, spacing, values, decays).map_err(err)?;
    let m = m.unwrap_or_else(|| besov_thermic::default_m(alpha));
    let r = besov_thermic::thermic_norm_on(&f, alpha, Exponent::from_f64(p).map_err(err)?, Exponent::from_f64(q).map_err(err)?, m, &VGrid::default())
        .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("value", r.value)?;
    out.set_item("lowpass", r.lowpass)?;
    out.set_item("seminorm", r.seminorm)?;
    out.set_item("tail_slope", r.tail_slope)?;
    out.set_item("growth", r.growth)?;
    out.set_item("diverges", r.diverges)?;
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (values, spacing, alpha, origin = 0.0, decays = true))]
fn norm_equivalence_ratio(values: Vec<f64>, spacing: f64, alpha: f64, origin: f64, decays: bool) -> PyResult<f64> {
    let f = GridFunction::new(origin, spacing, values, decays).map_err(err)?;
    Ok(besov_thermic::norm_equivalence_ratio(&f, alpha).map_err(err)?.ratio)
}

#[pyfunction]
#[pyo3(signature = (i, k, eta, beta_k = None))]
fn besov_exponents<'py>(py: Python<'py>, i: usize, k: usize, eta: f64, beta_k: Option<f64>) -> PyResult<Bound<'py, PyDict>> {
    let e = besov_thermic::besov_exponents(i, k, eta, beta_k).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("alpha", e.alpha)?;
    out.set_item("rho", e.rho)?;
    out.set_item("gamma", e.gamma)?;
    out.set_item("alpha_exact", e.alpha_exact.to_string())?;
    out.set_item("gamma_exact", e.gamma_exact.to_string())?;
    out.set_item("gamma_strict", e.gamma_strict)?;
    out.set_item("admissible", e.admissible)?;
    Ok(out)
}

#[pyfunction]
fn peano_extremal(alpha: f64, t: f64) -> f64 {
    peano_lab::peano_extremal(alpha, t)
}

/// Smallest-ε crossing of the drift share through 1/2; `None` when there is none.
#[pyfunction]
#[pyo3(signature = (alphas, gamma, l, epsilons, paths = 2000, horizon = 1e-8, steps = 200, seed = 11))]
#[allow(clippy::too_many_arguments)]
fn threshold_scan(alphas: Vec<f64>, gamma: f64, l: usize, epsilons: Vec<f64>, paths: usize, horizon: f64, steps: usize, seed: u64) -> PyResult<Option<f64>> {
    let settings = peano_lab::ScanSettings { horizon, steps, seed };
    let r = peano_lab::threshold_scan(&alphas, gamma, l, &epsilons, paths, &settings).map_err(err)?;
    Ok(match r.crossing {
        peano_lab::Crossing::At(a) => Some(a),
        _ => None,
    })
}

/// Runs one acceptance check; returns `(passed, summary line)`.
#[pyfunction]
#[pyo3(signature = (id, seed = None))]
fn run_check(py: Python<'_>, id: usize, seed: Option<u64>) -> (bool, String) {
    let mut cfg = suite::SuiteConfig::default();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let r = py.detach(|| suite::run_check(id, &cfg));
    (r.outcome.passed, r.outcome.line())
}

#[pymodule]
fn pychainlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyChain>()?;
    m.add_class::<PyProxy>()?;
    m.add_function(wrap_pyfunction!(resolvent, m)?)?;
    m.add_function(wrap_pyfunction!(flow, m)?)?;
    m.add_function(wrap_pyfunction!(gsp_condition, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(fluctuation_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(thermic_norm, m)?)?;
    m.add_function(wrap_pyfunction!(norm_equivalence_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(besov_exponents, m)?)?;
    m.add_function(wrap_pyfunction!(peano_extremal, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_scan, m)?)?;
    m.add_function(wrap_pyfunction!(run_check, m)?)?;
    Ok(())
}
