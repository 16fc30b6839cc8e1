// SPDX-License-Identifier: Apache-2.0

//! Python module `tmsim_py`: scenario configs, stepping simulations, presets
//! and a few pure market and controller functions.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;
use serde_json::Value;

use tmsim::hvac::{self, HvacParams, PriceHistory};
use tmsim::market::auction::{self, Bid};
use tmsim::sim::{self, ScenarioConfig};
use tmsim::SimError;

fn sim_err(e: SimError) -> PyErr {
    match e {
        SimError::Config(c) => PyValueError::new_err(c.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (None, Some(u)) => u.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, json_to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    json_to_py(py, &serde_json::to_value(value).map_err(value_err)?)
}

fn from_py<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let json = obj.py().import("json")?.call_method1("dumps", (obj,))?;
    serde_json::from_str(&json.extract::<String>()?).map_err(value_err)
}

/// A scenario configuration.
#[pyclass(name = "Scenario", module = "tmsim_py", skip_from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    #[new]
    #[pyo3(signature = (json = None))]
    fn new(json: Option<&str>) -> PyResult<Self> {
        let inner = match json {
            Some(text) => ScenarioConfig::from_json(text).map_err(value_err)?,
            None => ScenarioConfig::default(),
        };
        Ok(PyScenario { inner })
    }

    /// Returns a copy with dotted `key=value` overrides applied.
    fn with_overrides(&self, overrides: Vec<String>) -> PyResult<Self> {
        Ok(PyScenario { inner: self.inner.with_overrides(&overrides).map_err(value_err)? })
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate_all(None).map(|_| ()).map_err(value_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn horizon(&self) -> i64 {
        self.inner.horizon
    }

    #[getter]
    fn market_mode(&self) -> PyResult<String> {
        Ok(serde_json::to_value(self.inner.market_mode).map_err(value_err)?.as_str().unwrap_or_default().to_string())
    }

    fn __repr__(&self) -> String {
        format!("Scenario(mode={:?}, horizon={}, seed={})", self.inner.market_mode, self.inner.horizon, self.inner.rng_seed)
    }
}

/// A simulation that can be stepped one interval at a time.
#[pyclass(name = "Simulation", module = "tmsim_py")]
struct PySimulation {
    inner: Option<sim::Simulation>,
}

impl PySimulation {
    fn sim(&mut self) -> PyResult<&mut sim::Simulation> {
        self.inner.as_mut().ok_or_else(|| PyRuntimeError::new_err("simulation already finished"))
    }
}

#[pymethods]
impl PySimulation {
    #[new]
    fn new(scenario: &PyScenario) -> PyResult<Self> {
        Ok(PySimulation { inner: Some(sim::Simulation::new(scenario.inner.clone()).map_err(sim_err)?) })
    }

    /// Advances one interval and returns its metrics row.
    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let report = self.sim()?.step_interval().map_err(sim_err)?;
        to_py(py, &report.metrics)
    }

    #[getter]
    fn interval(&mut self) -> PyResult<u32> {
        Ok(self.sim()?.clock().interval_index)
    }

    #[getter]
    fn done(&mut self) -> PyResult<bool> {
        Ok(self.sim()?.is_done())
    }

    fn fork(&mut self) -> PyResult<Self> {
        Ok(PySimulation { inner: Some(self.sim()?.clone()) })
    }

    /// Runs the remaining intervals. The simulation cannot be stepped afterwards.
    fn run(&mut self) -> PyResult<PyRunResult> {
        let sim = self.inner.take().ok_or_else(|| PyRuntimeError::new_err("simulation already finished"))?;
        Ok(PyRunResult { inner: sim.run_to_completion().map_err(sim_err)? })
    }
}

/// Outputs of a completed run.
#[pyclass(name = "RunResult", module = "tmsim_py")]
struct PyRunResult {
    inner: sim::RunResult,
}

#[pymethods]
impl PyRunResult {
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.summary)
    }

    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.metric_series.rows)
    }

    fn alerts<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.alerts)
    }

    fn ledger_jsonl(&self) -> Option<String> {
        self.inner.ledger.as_ref().map(|entries| {
            entries.iter().map(|e| serde_json::to_string(e).unwrap_or_default() + "\n").collect()
        })
    }

    /// Writes every export file under `dir` and returns their paths.
    fn export(&self, dir: PathBuf) -> PyResult<Vec<String>> {
        let paths = sim::export_run(&self.inner, &dir).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(paths.into_iter().map(|p| p.to_string_lossy().into_owned()).collect())
    }

    #[getter]
    fn total_traded_kwh(&self) -> f64 {
        self.inner.summary.total_traded_kwh.kwh()
    }
}

#[pyfunction]
fn run(scenario: &PyScenario) -> PyResult<PyRunResult> {
    let result = sim::run_to_completion(scenario.inner.clone()).map_err(sim_err)?;
    Ok(PyRunResult { inner: result })
}

/// Runs a named preset into `out` and returns `{label: summary}`.
#[pyfunction]
#[pyo3(signature = (name, out, seed = None, overrides = None))]
fn run_preset<'py>(
    py: Python<'py>,
    name: &str,
    out: PathBuf,
    seed: Option<u64>,
    overrides: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyAny>> {
    let outcome = py
        .detach(|| sim::run_preset(name, &out, seed, &overrides.unwrap_or_default()))
        .map_err(sim_err)?;
    let dict = PyDict::new(py);
    for (label, r) in &outcome.runs {
        dict.set_item(label, to_py(py, &r.summary)?)?;
    }
    Ok(dict.into_any())
}

#[pyfunction]
fn presets() -> Vec<&'static str> {
    sim::PRESETS.to_vec()
}

/// Clears one interval. `bids` is a list of dicts with `owner_id`, `side`,
/// `price`, `quantity` (kWh), `interval` and `submit_seq`.
#[pyfunction]
fn clear_double_auction<'py>(py: Python<'py>, bids: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let bids: Vec<Bid> = from_py(bids)?;
    let interval = bids.first().map_or(0, |b| b.interval);
    let result = auction::clear_double_auction(interval, &bids).map_err(value_err)?;
    to_py(py, &result)
}

/// Setpoint for a clearing price given controller params and a price history.
#[pyfunction]
fn compute_setpoint(params: &Bound<'_, PyAny>, prices: Vec<f64>, p_clear: f64) -> PyResult<f64> {
    let params: HvacParams = from_py(params)?;
    hvac::compute_setpoint(&params, &PriceHistory::from_prices(&prices), p_clear).map_err(value_err)
}

/// Bid price for a room temperature given controller params and a price history.
#[pyfunction]
fn compute_bid_price(params: &Bound<'_, PyAny>, prices: Vec<f64>, t_current: f64) -> PyResult<f64> {
    let params: HvacParams = from_py(params)?;
    hvac::compute_bid_price(&params, &PriceHistory::from_prices(&prices), t_current).map_err(value_err)
}

#[pymodule]
fn tmsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PySimulation>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_preset, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(clear_double_auction, m)?)?;
    m.add_function(wrap_pyfunction!(compute_setpoint, m)?)?;
    m.add_function(wrap_pyfunction!(compute_bid_price, m)?)?;
    Ok(())
}
