//! Python bindings: run configurations, inspect geometry, score errors.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use multicontinuum::config::{Overrides, RunConfig, Stage};
use multicontinuum::geometry::{build_timeline, GeometryConfig};
use multicontinuum::metrics::{ratio_of_sums, BlockContribution};
use multicontinuum::pipeline::run_pipeline;
use multicontinuum::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Parse { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Default run configuration as TOML.
#[pyfunction]
fn default_config() -> PyResult<String> {
    Ok(RunConfig::default().resolved().map_err(to_py)?.to_toml_string())
}

/// Run the pipeline for a TOML configuration and return the manifest as JSON.
#[pyfunction]
#[pyo3(signature = (config, out_dir=None, stages=None))]
fn run(py: Python<'_>, config: &str, out_dir: Option<PathBuf>, stages: Option<Vec<String>>) -> PyResult<String> {
    let mut cfg = RunConfig::from_toml_str(config).map_err(to_py)?;
    let stages = stages
        .map(|s| s.iter().map(|name| Stage::parse(name)).collect::<multicontinuum::Result<Vec<_>>>())
        .transpose()
        .map_err(to_py)?;
    cfg.apply(&Overrides {
        out: out_dir,
        stages,
        ..Default::default()
    })
    .map_err(to_py)?;
    let (manifest, _) = py.detach(|| run_pipeline(&cfg)).map_err(to_py)?;
    serde_json::to_string(&manifest).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Labels of the default channel lattice per level, rows bottom to top.
/// 0 is the excluded matrix, 1 and 2 the continua.
#[pyfunction]
#[pyo3(signature = (n_cells=240, n_steps=3))]
fn lattice_labels(n_cells: usize, n_steps: usize) -> PyResult<Vec<Vec<Vec<u8>>>> {
    let t = build_timeline(&GeometryConfig::default_lattice(n_cells, n_steps)).map_err(to_py)?;
    Ok((0..t.n_levels())
        .map(|k| (0..n_cells).map(|iy| (0..n_cells).map(|ix| t.label(k, ix, iy) as u8).collect()).collect())
        .collect())
}

/// Sum of squared macro-minus-fine differences over the sum of squared fine values.
#[pyfunction]
fn error_ratio(fine: Vec<f64>, macro_values: Vec<f64>) -> PyResult<Option<f64>> {
    if fine.len() != macro_values.len() {
        return Err(PyValueError::new_err(format!("{} fine values but {} macro values", fine.len(), macro_values.len())));
    }
    let c: Vec<BlockContribution> = fine
        .iter()
        .zip(&macro_values)
        .enumerate()
        .map(|(block, (&fine, &macro_))| BlockContribution { block, fine, macro_ })
        .collect();
    Ok(ratio_of_sums(&c))
}

#[pymodule]
fn multicontinuum_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(lattice_labels, m)?)?;
    m.add_function(wrap_pyfunction!(error_ratio, m)?)?;
    Ok(())
}
