//! Python bindings: suite runner, quantization and the spectral-parameter solver.

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use feshflow::config::ExperimentConfig;
use feshflow::flow::{solve_e, KernelFamily};
use feshflow::kernels::quantize;
use feshflow::suites::{self, Experiment};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn config(json: Option<&str>) -> PyResult<ExperimentConfig> {
    match json {
        Some(s) => ExperimentConfig::from_json(s).map_err(|e| PyValueError::new_err(e.to_string())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn experiment(json: Option<&str>) -> PyResult<Experiment> {
    Experiment::new(config(json)?).map_err(err)
}

#[pyfunction]
fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

#[pyfunction]
fn suite_names() -> Vec<&'static str> {
    suites::SUITES.to_vec()
}

#[pyfunction]
fn explain(suite: &str) -> PyResult<&'static str> {
    suites::explain(suite).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// JSON report of one suite; `config` is an optional JSON configuration.
#[pyfunction]
#[pyo3(signature = (suite, config=None))]
fn run_suite(py: Python<'_>, suite: &str, config: Option<&str>) -> PyResult<String> {
    let exp = experiment(config)?;
    let out = py.detach(|| exp.run_suite(suite)).map_err(err)?;
    serde_json::to_string(&out.report).map_err(err)
}

/// `H[w(z)]` of ensemble member `member` as nested lists.
#[pyfunction]
#[pyo3(signature = (member, z, config=None))]
fn quantized(member: usize, z: Complex64, config: Option<&str>) -> PyResult<Vec<Vec<Complex64>>> {
    let exp = experiment(config)?;
    let w = exp.ensemble.get(member).ok_or_else(|| PyValueError::new_err("member out of range"))?;
    let h = quantize(w, z, &exp.basis).map_err(err)?;
    let m = h.matrix();
    Ok((0..m.nrows()).map(|a| (0..m.ncols()).map(|b| m[(a, b)]).collect()).collect())
}

/// `(E_α(ζ), |Q_α(E_α(ζ)) − ζ|, iterations)` for `α = mδ`.
#[pyfunction]
#[pyo3(signature = (member, m, zeta, config=None))]
fn spectral_parameter(member: usize, m: usize, zeta: Complex64, config: Option<&str>) -> PyResult<(Complex64, f64, usize)> {
    let exp = experiment(config)?;
    let w = exp.ensemble.get(member).ok_or_else(|| PyValueError::new_err("member out of range"))?;
    let fam = KernelFamily::new(w, &exp.basis);
    let tr = solve_e(&exp.ctx, &fam, m, zeta).map_err(err)?;
    Ok((tr.z, tr.q_residual, tr.iterations()))
}

#[pymodule]
fn pyfeshflow(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(version, m)?)?;
    m.add_function(wrap_pyfunction!(suite_names, m)?)?;
    m.add_function(wrap_pyfunction!(explain, m)?)?;
    m.add_function(wrap_pyfunction!(run_suite, m)?)?;
    m.add_function(wrap_pyfunction!(quantized, m)?)?;
    m.add_function(wrap_pyfunction!(spectral_parameter, m)?)?;
    Ok(())
}
