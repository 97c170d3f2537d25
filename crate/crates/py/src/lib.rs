//! Python bindings: run a scenario from JSON text and get the summary and
//! per-step records back as JSON strings.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use swarmtrack::config::ScenarioConfig;
use swarmtrack::runner::{self, RunError, RunOptions};

fn to_py(e: RunError) -> PyErr {
    match e {
        RunError::Config(c) => PyValueError::new_err(c.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn parse(config_json: &str) -> PyResult<ScenarioConfig> {
    ScenarioConfig::from_json(config_json).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Runs a scenario and returns `(summary_json, records_json)`.
#[pyfunction]
#[pyo3(signature = (config_json, seed=None, steps=None))]
fn run(config_json: &str, seed: Option<u64>, steps: Option<usize>) -> PyResult<(String, String)> {
    let mut cfg = parse(config_json)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(s) = steps {
        cfg.steps = s;
    }
    let out = runner::run(&cfg, &RunOptions::default()).map_err(to_py)?;
    let summary = serde_json::to_string(&out.summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let records = serde_json::to_string(&out.records).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((summary, records))
}

/// Fixed-margin sweep; returns a JSON list of rows.
#[pyfunction]
fn sweep(config_json: &str, etas: Vec<f64>, seeds: Vec<u64>) -> PyResult<String> {
    let cfg = parse(config_json)?;
    let rows = runner::sweep(&cfg, &etas, &seeds).map_err(to_py)?;
    serde_json::to_string(&rows).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Graph connectivity λ₂ for a list of (x, y) positions.
#[pyfunction]
#[pyo3(signature = (positions, radius, sigma=None))]
fn fiedler_value(positions: Vec<(f64, f64)>, radius: f64, sigma: Option<f64>) -> f64 {
    let xs: Vec<swarmtrack::Vec2> = positions.iter().map(|&(x, y)| swarmtrack::Vec2::new(x, y)).collect();
    let sigma = sigma.unwrap_or_else(|| swarmtrack::graph::default_sigma(radius));
    let g = swarmtrack::graph::CommGraph::build(&xs, radius, sigma);
    swarmtrack::graph::exact_fiedler(&g.laplacian).lambda2
}

#[pymodule]
fn swarmtrack_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(fiedler_value, m)?)?;
    Ok(())
}
