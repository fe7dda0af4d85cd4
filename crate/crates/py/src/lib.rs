//! Python bindings: load sessions, replay them through the engine step by
//! step, press buttons and read back events, deliveries and metrics.
//!
//! Structured values cross the boundary as JSON and are decoded with the
//! `json` module, so Python sees plain dicts and lists.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;
use sidelight_core::config::EngineConfig;
use sidelight_core::orchestrator::{compute_metrics as core_metrics, read_delivery_log};
use sidelight_core::session::{event_stream, load_profile, load_session as core_load, profile_id, Button, ButtonEvent, Event};
use sidelight_core::{Engine, PipelineVariant, SessionRecording};

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Engine configuration, loaded from TOML or defaults.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
pub struct PyConfig {
    inner: EngineConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (path=None, variant=None))]
    fn new(path: Option<PathBuf>, variant: Option<&str>) -> PyResult<Self> {
        let mut inner = match path {
            Some(p) => EngineConfig::load(p).map_err(value_err)?,
            None => EngineConfig::default(),
        };
        if let Some(v) = variant {
            inner.variant = v.parse::<PipelineVariant>().map_err(PyValueError::new_err)?;
        }
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.variant.to_string()
    }

    /// Returns a copy with a JSON object merged over the current values.
    fn with_overrides(&self, overrides: &str) -> PyResult<Self> {
        let v: serde_json::Value = serde_json::from_str(overrides).map_err(value_err)?;
        Ok(Self { inner: self.inner.with_overrides(&v).map_err(value_err)? })
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }
}

/// A recorded session loaded from disk.
#[pyclass(name = "Session", frozen)]
pub struct PySession {
    rec: Arc<SessionRecording>,
    dir: PathBuf,
}

#[pymethods]
impl PySession {
    #[getter]
    fn session_id(&self) -> &str {
        &self.rec.session_id
    }

    #[getter]
    fn duration_ms(&self) -> u64 {
        self.rec.duration_ms()
    }

    #[getter]
    fn frame_count(&self) -> usize {
        self.rec.frames.len()
    }

    #[getter]
    fn gaze_count(&self) -> usize {
        self.rec.gaze.len()
    }

    #[getter]
    fn path(&self) -> PathBuf {
        self.dir.clone()
    }

    fn __repr__(&self) -> String {
        format!("Session({:?}, {} frames, {} ms)", self.rec.session_id, self.rec.frames.len(), self.rec.duration_ms())
    }
}

#[pyfunction]
fn load_session(path: PathBuf) -> PyResult<PySession> {
    let rec = core_load(&path).map_err(|e| PyOSError::new_err(e.to_string()))?;
    Ok(PySession { rec: Arc::new(rec), dir: path })
}

fn parse_button(name: &str) -> PyResult<Button> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown button {name:?} (up, left, bottom, right)")))
}

/// A replay that can be driven event by event.
#[pyclass(name = "Replay", unsendable)]
pub struct PyReplay {
    engine: Engine,
    events: Vec<Event>,
    times: Vec<u64>,
    cursor: usize,
    finished: bool,
}

impl PyReplay {
    fn finish_if_done(&mut self) {
        if self.cursor >= self.events.len() && !self.finished {
            self.engine.finish();
            self.finished = true;
        }
    }
}

#[pymethods]
impl PyReplay {
    /// Mock providers are always used; `mock_script` falls back to
    /// `mock_chat.json` in the session directory.
    #[new]
    #[pyo3(signature = (session, profile, config=None, mock_script=None))]
    fn new(session: &PySession, profile: PathBuf, config: Option<PyConfig>, mock_script: Option<PathBuf>) -> PyResult<Self> {
        let config = config.map(|c| c.inner).unwrap_or_default();
        let user = load_profile(&profile).map_err(value_err)?;
        let script = mock_script.or_else(|| Some(session.dir.join("mock_chat.json")).filter(|p| p.is_file()));
        let providers = config.build_providers(true, script.as_deref()).map_err(value_err)?;
        let history = config
            .open_history(&profile_id(&profile), &session.rec.session_id)
            .map_err(|e| PyOSError::new_err(e.to_string()))?;
        let events = event_stream(&session.rec);
        let times = events.iter().map(|e| e.t_ms(&session.rec)).collect();
        let engine = Engine::new(session.rec.clone(), user, config, providers, Arc::new(Mutex::new(history)));
        Ok(Self { engine, events, times, cursor: 0, finished: false })
    }

    #[getter]
    fn now_ms(&self) -> u64 {
        self.engine.now_ms()
    }

    #[getter]
    fn finished(&self) -> bool {
        self.finished
    }

    /// Processes the next recorded event. Returns False once the recording
    /// is exhausted.
    fn step(&mut self) -> bool {
        if let Some(ev) = self.events.get(self.cursor) {
            self.engine.step(ev);
            self.cursor += 1;
        }
        self.finish_if_done();
        !self.finished
    }

    /// Processes every recorded event up to and including `t_ms`.
    fn run_until(&mut self, t_ms: u64) {
        while let Some(ev) = self.events.get(self.cursor) {
            if self.times[self.cursor] > t_ms {
                break;
            }
            self.engine.step(ev);
            self.cursor += 1;
        }
        self.finish_if_done();
    }

    fn run_to_end(&mut self) {
        self.run_until(u64::MAX);
    }

    /// Presses a ring button at the current time.
    #[pyo3(signature = (button, query_text=None))]
    fn press(&mut self, button: &str, query_text: Option<String>) -> PyResult<()> {
        let now = self.engine.now_ms();
        let ev = match (parse_button(button)?, query_text) {
            (Button::Right, Some(q)) => ButtonEvent::query(now, q),
            (b, None) => ButtonEvent::new(b, now),
            (_, Some(_)) => return Err(PyValueError::new_err("query_text is only valid with the right button")),
        };
        self.engine.press(&ev);
        Ok(())
    }

    fn drain_events<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let events = self.engine.drain_events();
        to_py(py, &events)
    }

    fn deliveries<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.engine.deliveries())
    }

    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.engine.metrics())
    }
}

/// Replays a whole session with mock providers and returns
/// `{"deliveries": [...], "metrics": {...}}`.
#[pyfunction]
#[pyo3(signature = (session, profile, config=None, mock_script=None))]
fn replay<'py>(
    py: Python<'py>,
    session: &PySession,
    profile: PathBuf,
    config: Option<PyConfig>,
    mock_script: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut run = PyReplay::new(session, profile, config, mock_script)?;
    run.run_to_end();
    let out = serde_json::json!({
        "deliveries": run.engine.deliveries(),
        "metrics": run.engine.metrics(),
    });
    to_py(py, &out)
}

/// Recomputes session metrics from a delivery log file.
#[pyfunction]
fn compute_metrics<'py>(py: Python<'py>, log: PathBuf, session: &PySession) -> PyResult<Bound<'py, PyAny>> {
    let records = read_delivery_log(&log).map_err(PyOSError::new_err)?;
    to_py(py, &core_metrics(&records, session.rec.duration_ms()))
}

#[pymodule]
pub fn sidelight_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PySession>()?;
    m.add_class::<PyReplay>()?;
    m.add_function(wrap_pyfunction!(load_session, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    Ok(())
}
