use std::sync::Arc;

use cocycle_lab::base::{PerturbedToralMap, SftBase, SymbolicPoint, ToralAutomorphism, TrigPoly, TrigTerm};
use cocycle_lab::error::Error;
use cocycle_lab::rigidity::{self, ConjugacyField, RateTriple};
use cocycle_lab::scenario::{self, RunOptions};
use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::UnknownScenario(_) => PyKeyError::new_err(e.to_string()),
        Error::Config { .. } | Error::Parse(_) | Error::InvalidInput(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

/// Eventually periodic bi-infinite symbol sequence, written `past|core|future`.
#[pyclass(name = "SymbolicPoint", frozen)]
struct PySymbolicPoint(SymbolicPoint);

#[pymethods]
impl PySymbolicPoint {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        text.parse().map(PySymbolicPoint).map_err(py_err)
    }

    #[staticmethod]
    fn periodic(word: Vec<u8>) -> Self {
        PySymbolicPoint(SymbolicPoint::periodic(&word))
    }

    fn symbol(&self, i: i64) -> u8 {
        self.0.symbol(i)
    }

    fn shift(&self, n: i64) -> Self {
        PySymbolicPoint(self.0.shift(n))
    }

    fn period(&self) -> Option<usize> {
        self.0.period()
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("SymbolicPoint('{}')", self.0)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }
}

/// Full shift or golden-mean shift with metric parameter `nu`.
#[pyclass(name = "Shift", frozen)]
struct PyShift(SftBase);

#[pymethods]
impl PyShift {
    #[staticmethod]
    fn full(symbols: usize, nu: f64) -> PyResult<Self> {
        SftBase::full_shift(symbols, nu).map(PyShift).map_err(py_err)
    }

    #[staticmethod]
    fn golden_mean(nu: f64) -> PyResult<Self> {
        SftBase::golden_mean(nu).map(PyShift).map_err(py_err)
    }

    fn distance(&self, x: &PySymbolicPoint, y: &PySymbolicPoint) -> f64 {
        self.0.distance(&x.0, &y.0)
    }

    fn homoclinic_points(&self, q: &PySymbolicPoint, depth: usize) -> PyResult<Vec<PySymbolicPoint>> {
        Ok(self.0.homoclinic_points(&q.0, depth).map_err(py_err)?.into_iter().map(PySymbolicPoint).collect())
    }

    /// Number of periodic orbits of minimal period at most `n_max`.
    fn count_orbits(&self, n_max: usize) -> PyResult<usize> {
        let base = cocycle_lab::base::BaseSystem::sft(self.0.clone());
        Ok(base.periodic_orbits(n_max, cocycle_lab::base::DEFAULT_ORBIT_CAP).map_err(py_err)?.len())
    }
}

/// Integer matrix acting on the torus.
#[pyclass(name = "ToralAutomorphism", frozen)]
struct PyToralAutomorphism(ToralAutomorphism);

#[pymethods]
impl PyToralAutomorphism {
    #[new]
    fn new(rows: Vec<Vec<i64>>) -> PyResult<Self> {
        ToralAutomorphism::new(rows).map(PyToralAutomorphism).map_err(py_err)
    }

    fn block_sum(&self, other: &PyToralAutomorphism) -> PyResult<Self> {
        self.0.block_sum(&other.0).map(PyToralAutomorphism).map_err(py_err)
    }

    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn eigenvalue_moduli(&self) -> Vec<f64> {
        self.0.eigenvalues().iter().map(|z| z.norm()).collect()
    }

    fn fixed_point_count(&self, n: u32) -> i128 {
        self.0.fixed_point_count(n)
    }

    fn fixed_points(&self, n: u32) -> PyResult<Vec<String>> {
        Ok(self.0.fixed_points(n, 1 << 20).map_err(py_err)?.iter().map(|p| p.to_string()).collect())
    }

    fn weakly_irreducible(&self) -> PyResult<bool> {
        Ok(self.0.weak_irreducibility().map_err(py_err)?.weakly_irreducible)
    }
}

/// Conjugacy `h` with `L h = h f` for a trigonometric perturbation of a hyperbolic automorphism.
#[pyclass(name = "Conjugacy", frozen)]
struct PyConjugacy(ConjugacyField);

#[pymethods]
impl PyConjugacy {
    /// `terms` are `(kind, amplitude, frequency)` with kind `"sin"` or `"cos"`.
    #[new]
    fn new(linear: &PyToralAutomorphism, terms: Vec<(String, Vec<f64>, Vec<i64>)>, grid: usize) -> PyResult<Self> {
        let terms = terms
            .into_iter()
            .map(|(kind, amp, freq)| match kind.as_str() {
                "sin" => Ok(TrigTerm::sin(amp, freq)),
                "cos" => Ok(TrigTerm::cos(amp, freq)),
                other => Err(PyValueError::new_err(format!("unknown term kind `{other}`"))),
            })
            .collect::<PyResult<Vec<_>>>()?;
        let map = PerturbedToralMap::new(linear.0.clone(), TrigPoly::new(terms)).map_err(py_err)?;
        rigidity::franks_manning(Arc::new(map), grid).map(PyConjugacy).map_err(py_err)
    }

    #[getter]
    fn residual(&self) -> f64 {
        self.0.residual
    }

    #[getter]
    fn holder_exponent(&self) -> Option<f64> {
        self.0.holder_exponent
    }

    fn eval(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        if x.len() != self.0.map().dim() {
            return Err(PyValueError::new_err("point has the wrong dimension"));
        }
        Ok(self.0.eval(&cocycle_lab::linalg::Vector::from_vec(x)).as_slice().to_vec())
    }

    fn defect(&self, x: Vec<f64>) -> PyResult<f64> {
        if x.len() != self.0.map().dim() {
            return Err(PyValueError::new_err("point has the wrong dimension"));
        }
        Ok(self.0.defect(&cocycle_lab::linalg::Vector::from_vec(x)))
    }

    fn summary_json(&self) -> String {
        to_json(&self.0.summary())
    }
}

/// Both bunching margins for rates `(nu, gamma, gamma_hat)`; returns `(first, second, holds)`.
#[pyfunction]
fn bunching(nu: f64, gamma: f64, gamma_hat: f64, beta: f64) -> PyResult<(f64, f64, bool)> {
    let c = rigidity::bunching_check(&RateTriple::new(nu, gamma, gamma_hat).map_err(py_err)?, beta);
    Ok((c.first, c.second, c.holds))
}

/// `(name, description)` for each built-in scenario.
#[pyfunction]
fn gallery() -> Vec<(String, String)> {
    scenario::gallery().iter().map(|g| (g.name.to_string(), g.description.to_string())).collect()
}

#[pyfunction]
fn gallery_config(name: &str) -> PyResult<String> {
    scenario::gallery_config(name).map(str::to_string).map_err(py_err)
}

/// Runs a gallery entry by name and returns the report as JSON text.
#[pyfunction]
#[pyo3(signature = (name, seed=None))]
fn run_gallery(py: Python<'_>, name: &str, seed: Option<u64>) -> PyResult<String> {
    let opts = RunOptions { seed };
    let out = py.detach(|| scenario::run_gallery(name, &opts)).map_err(py_err)?;
    Ok(out.report.to_json())
}

/// Runs a config given as text and returns the report as JSON text.
#[pyfunction]
#[pyo3(signature = (text, seed=None))]
fn run_config(py: Python<'_>, text: &str, seed: Option<u64>) -> PyResult<String> {
    let opts = RunOptions { seed };
    let out = py.detach(|| scenario::run_config(text, &opts)).map_err(py_err)?;
    Ok(out.report.to_json())
}

#[pymodule]
pub fn cocycle_lab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySymbolicPoint>()?;
    m.add_class::<PyShift>()?;
    m.add_class::<PyToralAutomorphism>()?;
    m.add_class::<PyConjugacy>()?;
    m.add_function(wrap_pyfunction!(bunching, m)?)?;
    m.add_function(wrap_pyfunction!(gallery, m)?)?;
    m.add_function(wrap_pyfunction!(gallery_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_gallery, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add("SCHEMA", scenario::SCHEMA)?;
    Ok(())
}
