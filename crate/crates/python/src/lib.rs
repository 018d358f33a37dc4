//! Python bindings. Results cross the boundary as plain dicts and lists.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

use railevac::campaign::{run_campaign, CampaignConfig};
use railevac::metrics::{FlowCount, MetricsRow};
use railevac::population::REFERENCE_GROUP_SIZE;
use railevac::refdata::{load_reference, validate_batch};
use railevac::sensitivity::{analyze, DesignPoint};
use railevac::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Schema(_) | Error::DegenerateModel(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, v: &Bound<'_, PyAny>) -> PyResult<T> {
    let s: String = py.import("json")?.call_method1("dumps", (v,))?.extract()?;
    serde_json::from_str(&s).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Runs a campaign and returns one metrics dict per run.
#[pyfunction]
#[pyo3(signature = (exits, widths, het, runs=1, seed=2024, trial_sizes=true))]
fn simulate<'py>(
    py: Python<'py>,
    exits: Vec<String>,
    widths: Vec<f64>,
    het: Vec<f64>,
    runs: usize,
    seed: u64,
    trial_sizes: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let exits = exits
        .iter()
        .map(|e| e.parse().map_err(err))
        .collect::<PyResult<Vec<_>>>()?;
    let cfg = CampaignConfig { exits, widths, het, runs, seed, trial_sizes, ..CampaignConfig::default() };
    let rows = py
        .detach(|| -> railevac::Result<Vec<MetricsRow>> {
            run_campaign(&cfg)?
                .iter()
                .map(|(_, _, log)| MetricsRow::from_log(log, REFERENCE_GROUP_SIZE, FlowCount::default()))
                .collect()
        })
        .map_err(err)?;
    to_py(py, &rows)
}

/// Fits the meta-model to `(W_m, H_pct, E_code, TET_s)` tuples.
#[pyfunction]
#[pyo3(signature = (points, mode="basic"))]
fn sensitivity<'py>(py: Python<'py>, points: Vec<(f64, f64, u8, f64)>, mode: &str) -> PyResult<Bound<'py, PyAny>> {
    let pts: Vec<DesignPoint> = points.into_iter().map(|(w, h, e, t)| DesignPoint::new(w, h, e, t)).collect();
    to_py(py, &analyze(&pts, mode).map_err(err)?)
}

/// The measured trials and side tables.
#[pyfunction]
fn reference(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    to_py(py, &load_reference().map_err(err)?)
}

/// Checks metrics dicts (as returned by `simulate`) against the measured bands.
#[pyfunction]
#[pyo3(signature = (rows, min_runs=30))]
fn validate<'py>(py: Python<'py>, rows: &Bound<'py, PyAny>, min_runs: usize) -> PyResult<Bound<'py, PyAny>> {
    let rows: Vec<MetricsRow> = from_py(py, rows)?;
    to_py(py, &validate_batch(&rows, &load_reference().map_err(err)?, min_runs).map_err(err)?)
}

#[pymodule]
fn railevac_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(sensitivity, m)?)?;
    m.add_function(wrap_pyfunction!(reference, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    Ok(())
}
