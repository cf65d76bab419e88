//! Python bindings for workload compilation, strategy optimization and the
//! private measure/reconstruct pipeline.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use hdmm::mechanism::{analytic_rmse, calibrate, measure, reconstruct};
use hdmm::optimize::{opt_hdmm, opt_selected};
use hdmm::workload::{gram, identity_error, impvec, parse_workload, svd_bound, unit_error, workload_to_json};
use hdmm::{DataVector, HdmmError, NoiseKind, NormKind, OptConfig, Operator};

fn py_err(e: HdmmError) -> PyErr {
    match e {
        HdmmError::Optimization { .. } | HdmmError::Singular(_) | HdmmError::Calibration(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn noise_kind(noise: &str, epsilon: f64, delta: f64) -> PyResult<NoiseKind> {
    match noise {
        "laplace" => Ok(NoiseKind::Laplace { epsilon }),
        "gaussian" => Ok(NoiseKind::Gaussian { epsilon, delta }),
        other => Err(PyValueError::new_err(format!("unknown noise {other:?}"))),
    }
}

fn norm(name: &str) -> PyResult<NormKind> {
    match name {
        "l1" | "laplace" => Ok(NormKind::L1),
        "l2" | "gaussian" => Ok(NormKind::L2),
        other => Err(PyValueError::new_err(format!("unknown norm {other:?}"))),
    }
}

/// A compiled workload.
#[pyclass(name = "Workload", frozen)]
struct PyWorkload {
    logical: hdmm::LogicalWorkload,
    implicit: hdmm::ImplicitWorkload,
}

impl PyWorkload {
    fn wrap(logical: hdmm::LogicalWorkload) -> PyResult<Self> {
        let implicit = impvec(&logical).map_err(py_err)?;
        Ok(PyWorkload { logical, implicit })
    }
}

#[pymethods]
impl PyWorkload {
    /// Parses a JSON workload spec.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Self::wrap(parse_workload(text).map_err(py_err)?)
    }

    /// All k-way marginals with unit weights.
    #[staticmethod]
    fn marginals(domain: Vec<usize>, k: usize) -> PyResult<Self> {
        Self::wrap(hdmm::LogicalWorkload::k_way_marginals(domain, k).map_err(py_err)?)
    }

    fn to_json(&self) -> String {
        workload_to_json(&self.logical).to_string()
    }

    #[getter]
    fn domain(&self) -> Vec<usize> {
        self.implicit.domain.clone()
    }

    #[getter]
    fn domain_size(&self) -> usize {
        self.implicit.domain_size()
    }

    #[getter]
    fn num_queries(&self) -> usize {
        self.implicit.num_queries()
    }

    #[getter]
    fn num_terms(&self) -> usize {
        self.implicit.terms.len()
    }

    /// Expected squared error of the identity strategy under unit noise.
    fn identity_error(&self) -> f64 {
        identity_error(&gram(&self.implicit))
    }

    /// Lower bound on the unit-noise error of any strategy.
    fn svd_bound(&self) -> PyResult<f64> {
        svd_bound(&gram(&self.implicit)).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Workload(domain={:?}, terms={}, queries={})",
            self.implicit.domain,
            self.implicit.terms.len(),
            self.implicit.num_queries()
        )
    }
}

/// A measurement strategy with unit sensitivity.
#[pyclass(name = "Strategy", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyStrategy {
    inner: hdmm::Strategy,
}

#[pymethods]
impl PyStrategy {
    #[staticmethod]
    #[pyo3(signature = (domain, norm = "l1"))]
    fn identity(domain: Vec<usize>, norm: &str) -> PyResult<Self> {
        Ok(PyStrategy { inner: hdmm::Strategy::identity(&domain, self::norm(norm)?) })
    }

    /// Parses the `variant` object of a strategy file.
    #[staticmethod]
    #[pyo3(signature = (text, norm = "l1"))]
    fn from_json(text: &str, norm: &str) -> PyResult<Self> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let inner = hdmm::Strategy::from_variant_json(&v, self::norm(norm)?).map_err(py_err)?;
        Ok(PyStrategy { inner: inner.normalized() })
    }

    fn to_json(&self) -> String {
        self.inner.variant_json().to_string()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind()
    }

    #[getter]
    fn num_rows(&self) -> usize {
        self.inner.num_rows()
    }

    #[getter]
    fn sensitivity(&self) -> f64 {
        self.inner.sensitivity()
    }

    /// Expected total squared error on `workload` under unit-variance noise.
    fn unit_error(&self, workload: &PyWorkload) -> PyResult<f64> {
        unit_error(&gram(&workload.implicit), &self.inner).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Strategy(kind={:?}, rows={})", self.inner.kind(), self.inner.num_rows())
    }
}

/// Optimizes a strategy and returns `(strategy, unit_error, operator)`.
///
/// With no `operators`, the high-dimensional optimizers and both baselines
/// compete and the lowest error wins.
#[pyfunction]
#[pyo3(signature = (workload, noise = "laplace", operators = None, restarts = 25, seed = 0, max_iters = 100))]
fn optimize(
    py: Python<'_>,
    workload: &PyWorkload,
    noise: &str,
    operators: Option<Vec<String>>,
    restarts: usize,
    seed: u64,
    max_iters: usize,
) -> PyResult<(PyStrategy, f64, String)> {
    let norm = norm(noise)?;
    let cfg = OptConfig { restarts, seed, max_iters, ..Default::default() };
    let w = &workload.implicit;
    let result = match operators {
        None => py.detach(|| opt_hdmm(w, &cfg, norm)).map_err(py_err)?,
        Some(names) => {
            let ops = names
                .iter()
                .map(|n| Operator::parse(n).ok_or_else(|| PyValueError::new_err(format!("unknown operator {n:?}"))))
                .collect::<PyResult<Vec<_>>>()?;
            let results = py.detach(|| opt_selected(w, &ops, &cfg, norm));
            let mut best: Option<hdmm::OptResult> = None;
            let mut errors = Vec::new();
            for (op, r) in results {
                match r {
                    Ok(r) if best.as_ref().map_or(true, |b| r.unit_error < b.unit_error) => best = Some(r),
                    Ok(_) => {}
                    Err(e) => errors.push(format!("{}: {e}", op.name())),
                }
            }
            best.ok_or_else(|| PyRuntimeError::new_err(errors.join("; ")))?
        }
    };
    Ok((PyStrategy { inner: result.strategy }, result.unit_error, result.operator.name().to_string()))
}

/// Calibrated noise scale (Laplace `b` or Gaussian `σ`).
#[pyfunction]
#[pyo3(signature = (noise, epsilon, delta = 1e-6))]
fn noise_scale(noise: &str, epsilon: f64, delta: f64) -> PyResult<f64> {
    Ok(calibrate(noise_kind(noise, epsilon, delta)?).map_err(py_err)?.scale)
}

/// Per-query RMSE of `strategy` on `workload` at the calibrated noise level.
#[pyfunction]
#[pyo3(signature = (workload, strategy, noise = "laplace", epsilon = 1.0, delta = 1e-6))]
fn expected_rmse(workload: &PyWorkload, strategy: &PyStrategy, noise: &str, epsilon: f64, delta: f64) -> PyResult<f64> {
    let spec = calibrate(noise_kind(noise, epsilon, delta)?).map_err(py_err)?;
    let w = &workload.implicit;
    analytic_rmse(&gram(w), &strategy.inner, &spec, w.num_queries()).map_err(py_err)
}

/// Measures a histogram with calibrated noise and returns reconstructed
/// workload answers, one list per workload term.
#[pyfunction]
#[pyo3(signature = (workload, strategy, counts, noise = "laplace", epsilon = 1.0, delta = 1e-6, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn run(
    py: Python<'_>,
    workload: &PyWorkload,
    strategy: &PyStrategy,
    counts: Vec<f64>,
    noise: &str,
    epsilon: f64,
    delta: f64,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let spec = calibrate(noise_kind(noise, epsilon, delta)?).map_err(py_err)?.with_seed(seed);
    let w = &workload.implicit;
    if counts.len() != w.domain_size() {
        return Err(PyValueError::new_err(format!(
            "expected {} counts, got {}",
            w.domain_size(),
            counts.len()
        )));
    }
    let x = DataVector { domain: w.domain.clone(), counts };
    py.detach(|| {
        let m = measure(&strategy.inner, &x, &spec)?;
        reconstruct(&strategy.inner, &m, w)
    })
    .map_err(py_err)
}

#[pymodule]
fn hdmm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyWorkload>()?;
    m.add_class::<PyStrategy>()?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    m.add_function(wrap_pyfunction!(noise_scale, m)?)?;
    m.add_function(wrap_pyfunction!(expected_rmse, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
