//! Python module `polymer`: constants, kernel values and command runs.

use std::collections::BTreeMap;

use polymer_cli::commands::{dispatch, resolve_action};
use polymer_cli::config::RunConfig;
use polymer_core::params::{lambda, weak_disorder_threshold, ModelParams};
use polymer_core::partition::{mean_forward, second_moment_limit as limit};
use polymer_core::walk::{alpha_d_streaming, poisson_tail_steps};
use polymer_core::{LatticeSite, TransitionKernel};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// α_d with its interval: (value, lo, hi, tail_bound).
#[pyfunction]
#[pyo3(signature = (d = 3, n_max = 300, tolerance = 0.05))]
fn alpha_d(d: usize, n_max: usize, tolerance: f64) -> PyResult<(f64, f64, f64, f64)> {
    let a = alpha_d_streaming(d, n_max, tolerance).map_err(value_err)?;
    let (lo, hi) = a.interval();
    Ok((a.value, lo, hi, a.tail_bound))
}

/// β* = 1/sqrt(1 + α_d) with its interval: (value, lo, hi).
#[pyfunction]
#[pyo3(signature = (d = 3, n_max = 300))]
fn beta_star(d: usize, n_max: usize) -> PyResult<(f64, f64, f64)> {
    let a = alpha_d_streaming(d, n_max, 1.0).map_err(value_err)?;
    let (lo, hi) = a.interval();
    let th = weak_disorder_threshold(a.value, lo, hi);
    Ok((th.value, th.lo, th.hi))
}

#[pyfunction]
fn lambda_beta(beta: f64) -> f64 {
    lambda(beta)
}

/// t → ∞ limit of the second moment of Z^t (inf outside the L² region).
#[pyfunction]
fn second_moment_limit(beta: f64, alpha: f64) -> f64 {
    limit(beta, alpha)
}

/// Discrete-step law q_n(z).
#[pyfunction]
fn kernel_q(n: usize, z: Vec<i32>) -> PyResult<f64> {
    let k = TransitionKernel::build(z.len(), n, n).map_err(value_err)?;
    k.q_coords(n, &z).map_err(value_err)
}

/// Continuous-time transition probability p_t(y).
#[pyfunction]
#[pyo3(signature = (t, y, tail_eps = 1e-14))]
fn p_continuous(t: f64, y: Vec<i32>, tail_eps: f64) -> PyResult<f64> {
    let n = poisson_tail_steps(t, tail_eps);
    let k = TransitionKernel::build(y.len(), n, n).map_err(value_err)?;
    k.p_continuous(t, &LatticeSite::new(&y), tail_eps).map_err(value_err)
}

/// Environment average of the point-to-line partition function: (mean, stderr).
#[pyfunction]
#[pyo3(signature = (beta, t, n_env, n_paths, d = 3, seed = 1))]
fn mean_z(beta: f64, t: f64, n_env: usize, n_paths: usize, d: usize, seed: u64) -> PyResult<(f64, f64)> {
    let p = ModelParams::new(d, beta);
    p.validate().map_err(value_err)?;
    let z = mean_forward(&p, t, n_env, n_paths, seed);
    Ok((z.mean, z.stderr))
}

/// Runs one command as the CLI would and returns (passed, report path).
#[pyfunction]
#[pyo3(signature = (command, action = None, settings = None))]
fn run(command: &str, action: Option<&str>, settings: Option<BTreeMap<String, String>>) -> PyResult<(bool, String)> {
    let action = resolve_action(command, action).map_err(value_err)?;
    let kv: Vec<(String, String)> = settings.unwrap_or_default().into_iter().collect();
    let cfg = RunConfig::resolve(command, &action, None, &kv).map_err(value_err)?;
    let mut rep = dispatch(&cfg).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let path = rep.finish(&cfg).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((rep.passed(), path.display().to_string()))
}

#[pymodule]
fn polymer(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(alpha_d, m)?)?;
    m.add_function(wrap_pyfunction!(beta_star, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_beta, m)?)?;
    m.add_function(wrap_pyfunction!(second_moment_limit, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_q, m)?)?;
    m.add_function(wrap_pyfunction!(p_continuous, m)?)?;
    m.add_function(wrap_pyfunction!(mean_z, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
