//! Python module `flss`. Structured results come back as plain dicts and
//! lists; configuration blocks are accepted as dicts with the same field
//! names as the JSON run configuration.

use flss_core::clt::{clt_summary, CltConfig, CltData};
use flss_core::density::{density_on_mesh, detect_support as core_detect_support};
use flss_core::fisher::{DataMatrix, TwoSample};
use flss_core::inference::{
    confidence_interval as core_ci, equality_test as core_test, power_function, CiConfig, SampleDims, TestConfig,
    ThetaFamily, DEFAULT_CRITICAL_VALUE,
};
use flss_core::montecarlo::{run_clt_experiment, ExperimentConfig, SimSpec};
use flss_core::stieltjes::solve_m0 as core_solve_m0;
use flss_core::{Error, MomentParams, SolverConfig, SpectralFunctional};
use nalgebra::DMatrix;
use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(flss, NumericalError, PyRuntimeError, "A solver, contour or estimator failed.");

fn to_py_err(e: Error) -> PyErr {
    match &e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ if e.is_numerical() => NumericalError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for flss_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py_err)
    }
}

/// Serializes through JSON into native Python objects.
fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>, what: &str) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(format!("{what}: {e}")))
}

/// A functional given as `"log"` or as a dict such as `{"kind": "power", "k": 2}`.
fn functional(obj: &Bound<'_, PyAny>) -> PyResult<SpectralFunctional> {
    if let Ok(kind) = obj.extract::<String>() {
        return serde_json::from_value(serde_json::json!({ "kind": kind }))
            .map_err(|e| PyValueError::new_err(format!("functional {kind:?}: {e}")));
    }
    from_py(obj, "functional")
}

fn functionals(obj: &Bound<'_, PyAny>) -> PyResult<Vec<SpectralFunctional>> {
    if obj.extract::<String>().is_ok() || obj.is_instance_of::<pyo3::types::PyDict>() {
        return Ok(vec![functional(obj)?]);
    }
    obj.try_iter()?.map(|f| functional(&f?)).collect()
}

/// Rows are variables, columns observations; real or complex entries.
fn matrix(obj: &Bound<'_, PyAny>) -> PyResult<DataMatrix> {
    fn build<T: Clone + nalgebra::Scalar>(rows: Vec<Vec<T>>) -> PyResult<DMatrix<T>> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(PyValueError::new_err("matrix must be a non-empty rectangular list of rows"));
        }
        Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j].clone()))
    }
    if let Ok(rows) = obj.extract::<Vec<Vec<f64>>>() {
        return Ok(DataMatrix::Real(build(rows)?));
    }
    let rows: Vec<Vec<Complex64>> = obj.extract()?;
    Ok(DataMatrix::Complex(build(rows)?))
}

fn two_sample(x: &Bound<'_, PyAny>, y: &Bound<'_, PyAny>, centered: bool) -> PyResult<TwoSample> {
    TwoSample::new(matrix(x)?, matrix(y)?, centered).py()
}

fn clt_config(config: Option<&Bound<'_, PyAny>>) -> PyResult<CltConfig> {
    config.map_or_else(|| Ok(CltConfig::default()), |c| from_py(c, "config"))
}

/// Discrete spectrum `H` as `(value, weight)` atoms; weights are normalized.
#[pyclass(module = "flss", frozen, from_py_object)]
#[derive(Clone)]
struct SpectralMeasure {
    inner: flss_core::SpectralMeasure,
}

#[pymethods]
impl SpectralMeasure {
    #[new]
    fn new(atoms: Vec<(f64, f64)>) -> PyResult<Self> {
        Ok(Self { inner: flss_core::SpectralMeasure::normalize(&atoms).py()? })
    }

    #[staticmethod]
    fn point_mass(value: f64) -> PyResult<Self> {
        Ok(Self { inner: flss_core::SpectralMeasure::point_mass(value).py()? })
    }

    #[staticmethod]
    fn from_eigenvalues(values: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: flss_core::SpectralMeasure::from_eigenvalues(&values).py()? })
    }

    #[getter]
    fn atoms(&self) -> Vec<(f64, f64)> {
        self.inner.atoms().to_vec()
    }

    fn scaled(&self, c: f64) -> PyResult<Self> {
        Ok(Self { inner: self.inner.scaled(c).py()? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("SpectralMeasure({:?})", self.inner.atoms())
    }
}

/// Limiting ratios `(y1, y2)` with finite-sample values `(yn1, yn2)`.
#[pyclass(module = "flss", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct AspectRatios {
    inner: flss_core::AspectRatios,
}

#[pymethods]
impl AspectRatios {
    #[new]
    #[pyo3(signature = (y1, y2, yn1=None, yn2=None))]
    fn new(y1: f64, y2: f64, yn1: Option<f64>, yn2: Option<f64>) -> PyResult<Self> {
        Ok(Self { inner: flss_core::AspectRatios::new(y1, y2, yn1.unwrap_or(y1), yn2.unwrap_or(y2)).py()? })
    }

    /// Ratios `p/n1`, `p/n2`, or `p/(n1-1)`, `p/(n2-1)` when `centered`.
    #[staticmethod]
    #[pyo3(signature = (p, n1, n2, centered=false))]
    fn from_dims(p: usize, n1: usize, n2: usize, centered: bool) -> PyResult<Self> {
        let inner = if centered {
            flss_core::AspectRatios::from_centered_dims(p, n1, n2)
        } else {
            flss_core::AspectRatios::from_dims(p, n1, n2)
        };
        Ok(Self { inner: inner.py()? })
    }

    #[getter]
    fn y1(&self) -> f64 {
        self.inner.y1()
    }

    #[getter]
    fn y2(&self) -> f64 {
        self.inner.y2()
    }

    #[getter]
    fn yn1(&self) -> f64 {
        self.inner.yn1()
    }

    #[getter]
    fn yn2(&self) -> f64 {
        self.inner.yn2()
    }

    #[getter]
    fn h_sq(&self) -> f64 {
        self.inner.h_sq()
    }

    fn __repr__(&self) -> String {
        format!(
            "AspectRatios(y1={}, y2={}, yn1={}, yn2={})",
            self.inner.y1(),
            self.inner.y2(),
            self.inner.yn1(),
            self.inner.yn2()
        )
    }
}

/// `(m0, m_under, residual)` at `z` off the real axis.
#[pyfunction]
fn solve_m0(z: Complex64, ratios: &AspectRatios, h: &SpectralMeasure) -> PyResult<(Complex64, Complex64, f64)> {
    let t = core_solve_m0(z, &ratios.inner, &h.inner, &SolverConfig::default()).py()?;
    Ok((t.m0, t.m_under, t.residual))
}

#[pyfunction]
fn detect_support(ratios: &AspectRatios, h: &SpectralMeasure) -> PyResult<(f64, f64)> {
    core_detect_support(&ratios.inner, &h.inner, &SolverConfig::default()).py()
}

/// Density on a uniform mesh over the support: `(mesh, values)`.
#[pyfunction]
#[pyo3(signature = (ratios, h, m=10_000, eps=1e-3, support=None))]
fn density(
    ratios: &AspectRatios,
    h: &SpectralMeasure,
    m: usize,
    eps: f64,
    support: Option<(f64, f64)>,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let c = density_on_mesh(&ratios.inner, &h.inner, support, m, eps, &SolverConfig::default()).py()?;
    Ok((c.mesh, c.values))
}

/// Asymptotic mean and covariance of the centered statistics. Raw samples
/// `x`, `y` are needed when `beta_x != 0`.
#[pyfunction]
#[pyo3(signature = (functionals, ratios, h, kappa=2, beta_x=0.0, beta_y=0.0, p=None, x=None, y=None, config=None))]
#[allow(clippy::too_many_arguments)]
fn clt(
    py: Python<'_>,
    functionals: &Bound<'_, PyAny>,
    ratios: &AspectRatios,
    h: &SpectralMeasure,
    kappa: u8,
    beta_x: f64,
    beta_y: f64,
    p: Option<usize>,
    x: Option<&Bound<'_, PyAny>>,
    y: Option<&Bound<'_, PyAny>>,
    config: Option<&Bound<'_, PyAny>>,
) -> PyResult<Py<PyAny>> {
    let fs = self::functionals(functionals)?;
    let moments = MomentParams::new(kappa, beta_x, beta_y).py()?;
    let mut cfg = clt_config(config)?;
    if cfg.dimension.is_none() {
        cfg.dimension = p;
    }
    let data = match (x, y) {
        (Some(x), Some(y)) => Some((matrix(x)?, matrix(y)?)),
        (None, None) => None,
        _ => return Err(PyValueError::new_err("pass both x and y, or neither")),
    };
    let d = data.as_ref().map(|(x, y)| CltData { x, y, t_half: None });
    let s = py.detach(|| clt_summary(&fs, &ratios.inner, &h.inner, &moments, d, &cfg)).py()?;
    to_py(py, &s)
}

fn test_config(critical_value: f64, config: Option<&Bound<'_, PyAny>>) -> PyResult<TestConfig> {
    Ok(TestConfig { clt: clt_config(config)?, critical_value, ..TestConfig::default() })
}

/// Likelihood-ratio test of `Sigma1 = Sigma2`.
#[pyfunction]
#[pyo3(signature = (x, y, centered=true, critical_value=DEFAULT_CRITICAL_VALUE, config=None))]
fn equality_test(
    py: Python<'_>,
    x: &Bound<'_, PyAny>,
    y: &Bound<'_, PyAny>,
    centered: bool,
    critical_value: f64,
    config: Option<&Bound<'_, PyAny>>,
) -> PyResult<Py<PyAny>> {
    let sample = two_sample(x, y, centered)?;
    let cfg = test_config(critical_value, config)?;
    let r = py.detach(|| core_test(&sample, &cfg)).py()?;
    to_py(py, &r)
}

/// Asymptotic power of the test at the alternative spectrum.
#[pyfunction]
#[pyo3(signature = (alternative, p, n1, n2, centered=true, critical_value=DEFAULT_CRITICAL_VALUE, config=None))]
#[allow(clippy::too_many_arguments)]
fn power(
    py: Python<'_>,
    alternative: &SpectralMeasure,
    p: usize,
    n1: usize,
    n2: usize,
    centered: bool,
    critical_value: f64,
    config: Option<&Bound<'_, PyAny>>,
) -> PyResult<Py<PyAny>> {
    let cfg = test_config(critical_value, config)?;
    let dims = SampleDims { p, n1, n2, centered };
    let r = py.detach(|| power_function(&alternative.inner, dims, &cfg)).py()?;
    to_py(py, &r)
}

/// Grid-scan interval for the parameter of `family`, e.g. `{"kind": "scale"}`.
#[pyfunction]
#[pyo3(signature = (x, y, family, a, b, m=10_000, threshold=None, two_sided=false, knots=Some(33), centered=true, config=None))]
#[allow(clippy::too_many_arguments)]
fn confidence_interval(
    py: Python<'_>,
    x: &Bound<'_, PyAny>,
    y: &Bound<'_, PyAny>,
    family: &Bound<'_, PyAny>,
    a: f64,
    b: f64,
    m: usize,
    threshold: Option<f64>,
    two_sided: bool,
    knots: Option<usize>,
    centered: bool,
    config: Option<&Bound<'_, PyAny>>,
) -> PyResult<Py<PyAny>> {
    let sample = two_sample(x, y, centered)?;
    let family: ThetaFamily = from_py(family, "family")?;
    let ci = CiConfig { test: test_config(DEFAULT_CRITICAL_VALUE, config)?, two_sided, knots, ..CiConfig::default() };
    let threshold = threshold.unwrap_or(DEFAULT_CRITICAL_VALUE);
    let r = py.detach(|| core_ci(&sample, &family, (a, b, m), threshold, &ci)).py()?;
    to_py(py, &r)
}

/// Monte Carlo replications of the centered statistics; `spec` uses the
/// simulation block's field names.
#[pyfunction]
#[pyo3(signature = (spec, functionals, predict=true, config=None))]
fn simulate(
    py: Python<'_>,
    spec: &Bound<'_, PyAny>,
    functionals: &Bound<'_, PyAny>,
    predict: bool,
    config: Option<&Bound<'_, PyAny>>,
) -> PyResult<Py<PyAny>> {
    let spec: SimSpec = from_py(spec, "spec")?;
    let fs = self::functionals(functionals)?;
    let exp = ExperimentConfig { clt: clt_config(config)?, predict };
    let t = py.detach(|| run_clt_experiment(&spec, &fs, &exp)).py()?;
    to_py(py, &t)
}

#[pymodule]
fn flss(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<SpectralMeasure>()?;
    m.add_class::<AspectRatios>()?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add("DEFAULT_CRITICAL_VALUE", DEFAULT_CRITICAL_VALUE)?;
    m.add_function(wrap_pyfunction!(solve_m0, m)?)?;
    m.add_function(wrap_pyfunction!(detect_support, m)?)?;
    m.add_function(wrap_pyfunction!(density, m)?)?;
    m.add_function(wrap_pyfunction!(clt, m)?)?;
    m.add_function(wrap_pyfunction!(equality_test, m)?)?;
    m.add_function(wrap_pyfunction!(power, m)?)?;
    m.add_function(wrap_pyfunction!(confidence_interval, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
