//! Python bindings. Reports come back as plain dicts.

use causal_ceo::finite_bt::{evaluate_bt_both, parse_bt_spec, BtLayout, CodeParams};
use causal_ceo::rdf::{self, RdfQuery};
use causal_ceo::tracking_sim::{self, SchemeConfig};
use causal_ceo::{model, ChannelSet, JointMode, SourceModel, Unit};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

fn err(e: causal_ceo::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn query(a: f64, sigma_v2: f64, sigma_w2: Vec<f64>, d: f64, mode: &str, bits: bool) -> PyResult<RdfQuery> {
    let m = SourceModel::new(a, sigma_v2).map_err(err)?;
    let ch = ChannelSet::new(sigma_w2).map_err(err)?;
    let mode: JointMode = mode.parse().map_err(err)?;
    let unit = if bits { Unit::Bits } else { Unit::Nats };
    Ok(RdfQuery::new(m, ch, d).with_mode(mode).with_unit(unit))
}

/// Steady-state filter quantities for every observer and all observers jointly.
#[pyfunction]
#[pyo3(signature = (a, sigma_v2, sigma_w2))]
fn steady_state<'py>(py: Python<'py>, a: f64, sigma_v2: f64, sigma_w2: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    let m = SourceModel::new(a, sigma_v2).map_err(err)?;
    let ss = model::steady_state(&m, &ChannelSet::new(sigma_w2).map_err(err)?).map_err(err)?;
    to_py(py, &ss)
}

/// Flat record of every rate at one target distortion.
#[pyfunction]
#[pyo3(signature = (a, sigma_v2, sigma_w2, d, mode = "riccati", bits = false))]
fn rdf_record<'py>(
    py: Python<'py>,
    a: f64,
    sigma_v2: f64,
    sigma_w2: Vec<f64>,
    d: f64,
    mode: &str,
    bits: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let q = query(a, sigma_v2, sigma_w2, d, mode, bits)?;
    to_py(py, &rdf::rdf_record(&q).map_err(err)?)
}

/// Minimum sum rate and its allocation.
#[pyfunction]
#[pyo3(signature = (a, sigma_v2, sigma_w2, d, mode = "riccati", bits = false))]
fn ceo_rdf<'py>(
    py: Python<'py>,
    a: f64,
    sigma_v2: f64,
    sigma_w2: Vec<f64>,
    d: f64,
    mode: &str,
    bits: bool,
) -> PyResult<(f64, Bound<'py, PyAny>)> {
    let q = query(a, sigma_v2, sigma_w2, d, mode, bits)?;
    let (rate, alloc) = rdf::ceo_rdf(&q).map_err(err)?;
    Ok((rate, to_py(py, &alloc)?))
}

/// Symmetric sum rates for growing K against the K → ∞ limit.
#[pyfunction]
#[pyo3(signature = (a, sigma_v2, sigma_w2, d, k_max, bits = false))]
fn large_k_report<'py>(
    py: Python<'py>,
    a: f64,
    sigma_v2: f64,
    sigma_w2: f64,
    d: f64,
    k_max: usize,
    bits: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let m = SourceModel::new(a, sigma_v2).map_err(err)?;
    let unit = if bits { Unit::Bits } else { Unit::Nats };
    to_py(py, &rdf::large_k_report(m, sigma_w2, d, k_max, unit).map_err(err)?)
}

/// Runs the test-channel scheme at the optimal allocation for `d`.
#[pyfunction]
#[pyo3(signature = (a, sigma_v2, sigma_w2, d, horizon = 10_000, trials = 10, seed = 0, mode = "riccati"))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    a: f64,
    sigma_v2: f64,
    sigma_w2: Vec<f64>,
    d: f64,
    horizon: usize,
    trials: usize,
    seed: u64,
    mode: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let q = query(a, sigma_v2, sigma_w2, d, mode, false)?;
    let (_, alloc) = rdf::ceo_rdf(&q).map_err(err)?;
    let mut cfg = SchemeConfig::new(q.model, q.channels, alloc);
    cfg.horizon = horizon;
    cfg.trials = trials;
    cfg.seed = seed;
    let report = py.detach(|| tracking_sim::simulate(&cfg)).map_err(err)?;
    to_py(py, &report)
}

/// Nonasymptotic bound for a pmf table; sizes and thresholds come from the table.
#[pyfunction]
#[pyo3(signature = (spec, alpha = 0.0, beta = 0.0, n = 1, perm = None))]
fn bt_eval<'py>(
    py: Python<'py>,
    spec: &str,
    alpha: f64,
    beta: f64,
    n: usize,
    perm: Option<Vec<usize>>,
) -> PyResult<Bound<'py, PyAny>> {
    let s = parse_bt_spec(spec).map_err(err)?;
    let layout = BtLayout::detect(&s.pmf).map_err(err)?;
    let (t, k) = (layout.t, layout.k);
    let missing = |what: &str| PyValueError::new_err(format!("table declares no {what} section"));
    let distortion = s.distortion.ok_or_else(|| missing("@distortion"))?;
    let d = s.thresholds.ok_or_else(|| missing("@thresholds"))?;
    let (l, m) = s.sizes.ok_or_else(|| missing("@sizes"))?;
    let mut p = CodeParams::uniform(t, k, 1, 1, alpha, beta, d, distortion);
    p.set_sizes(&l, &m).map_err(err)?;
    p.n = n;
    if let Some(pi) = perm {
        p.pi = pi.iter().map(|i| i.checked_sub(1).ok_or_else(|| PyValueError::new_err("perm is 1-based"))).collect::<PyResult<_>>()?;
    }
    let (bound, sharp) = py.detach(|| evaluate_bt_both(&s.pmf, &p)).map_err(err)?;
    let out = to_py(py, &bound)?;
    out.set_item("sharp", sharp)?;
    Ok(out)
}

#[pymodule]
fn causal_ceo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(steady_state, m)?)?;
    m.add_function(wrap_pyfunction!(rdf_record, m)?)?;
    m.add_function(wrap_pyfunction!(ceo_rdf, m)?)?;
    m.add_function(wrap_pyfunction!(large_k_report, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(bt_eval, m)?)?;
    Ok(())
}
