//! Python bindings: Airy evaluation, builtin profiles, synthetic traces, fits and reconstructions.

use airyguide::airy_fit::{fit_least_squares, lambda_resonant_point, FitBox};
use airyguide::cli_runner::simulate_traces;
use airyguide::forward_solver::SurfaceTrace;
use airyguide::inversion_pipeline::{
    builtin_frequencies as frequencies_of, builtin_plan, builtin_source_positions, builtin_sources, error_metrics,
    reconstruct_profile, ReconstructionOptions,
};
use airyguide::special_functions;
use airyguide::waveguide_model::{uniform_grid, BuiltinId, Profile};
use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use std::sync::Arc;

fn to_py(e: airyguide::Error) -> PyErr {
    use airyguide::Error::*;
    match e {
        Domain(_) | ForbiddenFrequency { .. } | Parse(_) | Support(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn builtin(id: &str) -> PyResult<BuiltinId> {
    BuiltinId::parse(id).map_err(to_py)
}

/// (Ai, Ai', Bi, Bi') at x.
#[pyfunction]
fn airy(x: f64) -> PyResult<(f64, f64, f64, f64)> {
    let v = special_functions::airy_eval(x).map_err(to_py)?;
    Ok((v.ai, v.ai_prime, v.bi, v.bi_prime))
}

/// The first `count` negative zeros of Ai.
#[pyfunction]
fn airy_zeros(count: usize) -> PyResult<Vec<f64>> {
    special_functions::airy_first_zeros(count).map_err(to_py)
}

#[pyfunction]
fn builtin_profiles() -> Vec<&'static str> {
    BuiltinId::ALL.iter().map(|id| id.name()).collect()
}

/// Width of a builtin profile at each abscissa.
#[pyfunction]
fn profile_width(id: &str, xs: Vec<f64>) -> PyResult<Vec<f64>> {
    let p = Profile::builtin(builtin(id)?);
    Ok(xs.iter().map(|&x| p.h(x)).collect())
}

/// (h_min, h_max, (a, b), eta) of a builtin profile.
#[pyfunction]
fn profile_bounds(id: &str) -> PyResult<(f64, f64, (f64, f64), f64)> {
    let p = Profile::builtin(builtin(id)?);
    Ok((p.h_min, p.h_max, p.support, p.eta))
}

#[pyfunction]
fn builtin_frequencies(id: &str) -> PyResult<Vec<f64>> {
    Ok(frequencies_of(builtin(id)?))
}

/// Surface trace u(x, 0) of a builtin profile at one frequency, with its default sources.
#[pyfunction]
#[pyo3(signature = (id, k, xs, noise = 0.0, seed = 0))]
fn simulate(id: &str, k: f64, xs: Vec<f64>, noise: f64, seed: u64) -> PyResult<Vec<Complex64>> {
    let b = builtin(id)?;
    let p = Arc::new(Profile::builtin(b));
    let mut tr = simulate_traces(&p, &[k], &builtin_sources(b), &xs, None, noise, seed).map_err(to_py)?;
    Ok(tr.remove(0).values)
}

/// Least-squares fit of z·Ai(β − αt); returns the parameters and x* = β/α.
#[pyfunction]
fn fit_airy<'py>(py: Python<'py>, t: Vec<f64>, values: Vec<Complex64>) -> PyResult<Bound<'py, PyDict>> {
    if t.len() != values.len() {
        return Err(PyValueError::new_err(format!("{} abscissae for {} values", t.len(), values.len())));
    }
    let tr = SurfaceTrace::new(t, values, 1.0).map_err(to_py)?;
    let r = fit_least_squares(&tr, &FitBox::default(), None).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("z", r.params.z)?;
    out.set_item("alpha", r.params.alpha)?;
    out.set_item("beta", r.params.beta)?;
    out.set_item("x_star", lambda_resonant_point(&r).ok())?;
    out.set_item("converged", r.converged)?;
    out.set_item("residual", r.residual_l2)?;
    out.set_item("iterations", r.iterations)?;
    Ok(out)
}

/// Noiseless reconstruction of a builtin profile from its own frequency set.
#[pyfunction]
#[pyo3(signature = (id, samples = 3201))]
fn reconstruct<'py>(py: Python<'py>, id: &str, samples: usize) -> PyResult<Bound<'py, PyDict>> {
    let b = builtin(id)?;
    let p = Arc::new(Profile::builtin(b));
    let xs = uniform_grid(-8.0, 8.0, samples);
    let plan = builtin_plan(b);
    let traces = py
        .detach(|| simulate_traces(&p, &plan.frequencies, &builtin_sources(b), &xs, None, 0.0, 0))
        .map_err(to_py)?;
    let opts = ReconstructionOptions::new(builtin_source_positions(b), p.eta);
    let r = py.detach(|| reconstruct_profile(&plan, &traces, p.support, &opts)).map_err(to_py)?;
    let m = error_metrics(&r, &p);
    let out = PyDict::new(py);
    out.set_item("points", r.points.iter().map(|q| (q.x_star, q.width)).collect::<Vec<_>>())?;
    out.set_item("breakpoints", r.breakpoints.clone())?;
    out.set_item("relative_error", m.relative_dense)?;
    out.set_item("relative_error_points", m.relative_points)?;
    out.set_item("warnings", r.warnings.clone())?;
    Ok(out)
}

#[pymodule]
#[pyo3(name = "airyguide")]
fn airyguide_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(airy, m)?)?;
    m.add_function(wrap_pyfunction!(airy_zeros, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_profiles, m)?)?;
    m.add_function(wrap_pyfunction!(profile_width, m)?)?;
    m.add_function(wrap_pyfunction!(profile_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_frequencies, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit_airy, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    Ok(())
}
