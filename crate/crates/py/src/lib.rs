//! Python bindings: configuration, the per-sample primitives and the
//! end-to-end benchmark.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;
use serde::Serialize;
use serde_json::Value;

use bcv_bench::config::RunConfig;
use bcv_bench::ingest::{self, AlignmentConfig};
use bcv_bench::labelling::{self, LabelRule};
use bcv_bench::metrics;
use bcv_bench::models::ModelKind;
use bcv_bench::pipeline::{self, Layout};
use bcv_bench::preprocess::{design_highpass, design_notch, filter_zero_phase, FilterSpec};
use bcv_bench::report::BenchmarkReport;
use bcv_bench::session::{CommandLabel, Horizon, JoystickSample, Timestamp};

create_exception!(bcv_bench_py, BcvError, PyException);
create_exception!(bcv_bench_py, ConfigError, BcvError);
create_exception!(bcv_bench_py, DataError, BcvError);

fn py_err(e: bcv_bench::Error) -> PyErr {
    match e.exit_code() {
        2 => ConfigError::new_err(e.to_string()),
        3 => DataError::new_err(e.to_string()),
        _ => BcvError::new_err(e.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_bound_py_any(py)?,
        Value::Number(n) => match (n.as_u64(), n.as_i64()) {
            (Some(u), _) => u.into_bound_py_any(py)?,
            (None, Some(i)) => i.into_bound_py_any(py)?,
            _ => n.as_f64().unwrap_or(f64::NAN).into_bound_py_any(py)?,
        },
        Value::String(s) => s.into_bound_py_any(py)?,
        Value::Array(a) => {
            let items = a.iter().map(|x| json_to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, json_to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let value = serde_json::to_value(v).map_err(|e| BcvError::new_err(e.to_string()))?;
    json_to_py(py, &value)
}

fn label_from_name(s: &str) -> PyResult<CommandLabel> {
    CommandLabel::ALL
        .into_iter()
        .find(|c| c.name() == s)
        .ok_or_else(|| DataError::new_err(format!("unknown command label {s:?}")))
}

/// Full run configuration. Accepts the same JSON document as the CLI.
#[pyclass(name = "RunConfig", module = "bcv_bench_py", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (json = None))]
    fn new(json: Option<&str>) -> PyResult<Self> {
        let inner = match json {
            Some(text) => RunConfig::from_json(text, "<python>".as_ref()).map_err(py_err)?,
            None => RunConfig::default(),
        };
        Ok(PyRunConfig { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        RunConfig::load(&path).map(|inner| PyRunConfig { inner }).map_err(py_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(py_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }

    #[getter]
    fn out_dir(&self) -> PathBuf {
        self.inner.out_dir()
    }

    #[setter]
    fn set_out_dir(&mut self, v: PathBuf) {
        self.inner.out_dir = Some(v);
    }

    #[getter]
    fn jobs(&self) -> usize {
        self.inner.jobs
    }

    #[setter]
    fn set_jobs(&mut self, v: usize) {
        self.inner.jobs = v;
    }

    #[getter]
    fn n_sessions(&self) -> usize {
        self.inner.n_sessions
    }

    #[setter]
    fn set_n_sessions(&mut self, v: usize) {
        self.inner.n_sessions = v;
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.train.epochs
    }

    #[setter]
    fn set_epochs(&mut self, v: usize) {
        self.inner.train.epochs = v;
    }

    #[getter]
    fn duration_s(&self) -> f64 {
        self.inner.synth.duration_s
    }

    #[setter]
    fn set_duration_s(&mut self, v: f64) {
        self.inner.synth.duration_s = v;
    }

    #[getter]
    fn horizons_ms(&self) -> Vec<u32> {
        self.inner.horizons_ms.iter().map(|h| h.ms()).collect()
    }

    #[setter]
    fn set_horizons_ms(&mut self, v: Vec<u32>) -> PyResult<()> {
        self.inner.horizons_ms = v.into_iter().map(Horizon::new).collect::<Result<_, _>>().map_err(py_err)?;
        Ok(())
    }

    #[getter]
    fn models(&self) -> Vec<&'static str> {
        self.inner.models.iter().map(|m| m.name()).collect()
    }

    #[setter]
    fn set_models(&mut self, v: Vec<String>) -> PyResult<()> {
        self.inner.models = v.iter().map(|s| ModelKind::parse(s)).collect::<Result<_, _>>().map_err(py_err)?;
        Ok(())
    }

    fn __repr__(&self) -> String {
        format!(
            "RunConfig(seed={}, n_sessions={}, horizons_ms={:?}, models={:?}, epochs={})",
            self.inner.seed,
            self.inner.n_sessions,
            self.horizons_ms(),
            self.models(),
            self.inner.train.epochs
        )
    }
}

/// Aggregated benchmark results.
#[pyclass(name = "Report", module = "bcv_bench_py", frozen)]
struct PyReport {
    inner: BenchmarkReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn n_runs(&self) -> usize {
        self.inner.runs.len()
    }

    /// Mean macro-F1 for one model and horizon, or None if it was not run.
    fn macro_f1(&self, model: &str, horizon_ms: u32) -> Option<f64> {
        self.inner.aggregate(model, horizon_ms).map(|a| a.mean.macro_f1)
    }

    fn aggregates<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.aggregates)
    }

    fn runs<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.runs)
    }

    fn metrics_csv(&self) -> String {
        bcv_bench::report::metrics_csv(&self.inner)
    }

    fn f1_svg(&self) -> String {
        bcv_bench::report::f1_svg(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!("Report(runs={}, aggregates={})", self.inner.runs.len(), self.inner.aggregates.len())
    }
}

/// Command class for one joystick reading, or None when both axes are active.
#[pyfunction]
#[pyo3(signature = (v_x, omega_z, tau = 0.1))]
fn classify_command(v_x: f64, omega_z: f64, tau: f64) -> Option<&'static str> {
    labelling::classify_command(v_x, omega_z, &LabelRule { tau }).map(CommandLabel::name)
}

/// Nearest joystick index for every EEG timestamp (nanoseconds).
#[pyfunction]
#[pyo3(signature = (eeg_ns, joy_ns, max_gap_ms = 100.0))]
fn align_nearest(eeg_ns: Vec<u64>, joy_ns: Vec<u64>, max_gap_ms: f64) -> PyResult<Vec<Option<usize>>> {
    let cfg = AlignmentConfig { max_gap_ms, ..AlignmentConfig::default() };
    cfg.validate().map_err(py_err)?;
    let eeg: Vec<Timestamp> = eeg_ns.into_iter().map(Timestamp::from_nanos).collect();
    let joy = joy_ns
        .into_iter()
        .map(|t| JoystickSample::new(Timestamp::from_nanos(t), 0.0, 0.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(py_err)?;
    Ok(ingest::align_nearest(&eeg, &joy, &cfg))
}

/// Zero-phase high-pass plus notch with the default filter settings.
#[pyfunction]
#[pyo3(signature = (signal, fs = 125.0))]
fn filter_signal(signal: Vec<f64>, fs: f64) -> PyResult<Vec<f64>> {
    let spec = FilterSpec::default();
    let sos = design_highpass(&spec, fs).and_then(|hp| Ok(hp.then(&design_notch(&spec, fs)?))).map_err(py_err)?;
    filter_zero_phase(&signal, &sos).map_err(py_err)
}

/// Accuracy, macro precision/recall/F1 and per-class scores.
#[pyfunction]
fn score<'py>(py: Python<'py>, truth: Vec<String>, pred: Vec<String>) -> PyResult<Bound<'py, PyAny>> {
    let t = truth.iter().map(|s| label_from_name(s)).collect::<PyResult<Vec<_>>>()?;
    let p = pred.iter().map(|s| label_from_name(s)).collect::<PyResult<Vec<_>>>()?;
    let cm = metrics::confusion(&t, &p).map_err(py_err)?;
    to_py(py, &metrics::metrics_from_confusion(&cm).map_err(py_err)?)
}

/// Generate the configured synthetic sessions; returns their directories.
#[pyfunction]
fn simulate(py: Python<'_>, config: PyRunConfig) -> PyResult<Vec<PathBuf>> {
    let cfg = config.inner;
    cfg.validate().map_err(py_err)?;
    py.detach(|| pipeline::cmd_simulate(&cfg, &Layout::new(cfg.out_dir()))).map_err(py_err)
}

/// Every stage for every session, then the report.
#[pyfunction]
fn run_all(py: Python<'_>, config: PyRunConfig) -> PyResult<PyReport> {
    let cfg = config.inner;
    cfg.validate().map_err(py_err)?;
    let report = py
        .detach(|| pipeline::with_jobs(cfg.jobs, || pipeline::cmd_run_all(&cfg, &Layout::new(cfg.out_dir()))))
        .map_err(py_err)?
        .map_err(py_err)?;
    Ok(PyReport { inner: report })
}

#[pymodule]
fn bcv_bench_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("BcvError", py.get_type::<BcvError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("DataError", py.get_type::<DataError>())?;
    m.add("HORIZONS_MS", Horizon::all().iter().map(|h| h.ms()).collect::<Vec<_>>())?;
    m.add("LABELS", CommandLabel::ALL.map(CommandLabel::name).to_vec())?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(classify_command, m)?)?;
    m.add_function(wrap_pyfunction!(align_nearest, m)?)?;
    m.add_function(wrap_pyfunction!(filter_signal, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_all, m)?)?;
    Ok(())
}
