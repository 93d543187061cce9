//! Python bindings: load a model, simulate in batch or step by step, and run
//! modal analysis. Events use the same one-line syntax as event files, e.g.
//! `"1.0 fault_on B8"` or `"2.0 setpoint_change G1.V_ref 1.05"`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rmsim::cli::load_system;
use rmsim::engine::{
    parse_event_line, run_batch, ChannelSelection, Event, EventKind, Method, OdeRhs, OdeSystem, RecordedTrajectory,
    SimulationConfig, StateVector,
};
use rmsim::modal::linearize;
use rmsim::model_io::{read_model, validate as validate_model};
use rmsim::realtime::console_eval;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_events(lines: Option<Vec<String>>) -> PyResult<Vec<Event>> {
    lines.unwrap_or_default().iter().map(|l| parse_event_line(l).map_err(value_err)).collect()
}

/// Diagnostics for a model file; empty when the model is valid.
#[pyfunction]
fn validate(path: PathBuf) -> PyResult<Vec<String>> {
    let sys = read_model(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
    Ok(validate_model(&sys).iter().map(|d| d.to_string()).collect())
}

/// Path of a bundled model: `kundur_two_area`, `ieee39` or `smib`.
#[pyfunction]
fn fixture(name: &str) -> PyResult<String> {
    let p = match name {
        "kundur_two_area" | "kundur" => rmsim::fixtures::kundur_two_area(),
        "ieee39" => rmsim::fixtures::ieee39(),
        "smib" => rmsim::fixtures::smib(),
        _ => return Err(PyKeyError::new_err(format!("no fixture '{name}'"))),
    };
    Ok(p.display().to_string())
}

/// An initialized model at its operating point.
#[pyclass(module = "pyrmsim")]
struct System {
    ode: OdeSystem,
    x0: StateVector,
    config: SimulationConfig,
}

#[pymethods]
impl System {
    #[new]
    #[pyo3(signature = (path, *, dt = 0.005, method = "modified_euler", corrector_iters = 1, keep_buses = None))]
    fn new(path: PathBuf, dt: f64, method: &str, corrector_iters: usize, keep_buses: Option<Vec<String>>) -> PyResult<Self> {
        let method = Method::parse(method).ok_or_else(|| value_err(format!("unknown method '{method}'")))?;
        let config = SimulationConfig {
            dt,
            method,
            corrector_iters,
            keep_buses: keep_buses.unwrap_or_default(),
            ..SimulationConfig::default()
        };
        let (ode, x0) = load_system(&path, &config).map_err(value_err)?;
        Ok(Self { ode, x0, config })
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.x0.len()
    }

    #[getter]
    fn state_names(&self) -> Vec<String> {
        self.ode.allocation().state_labels()
    }

    #[getter]
    fn initial_state(&self) -> Vec<f64> {
        self.x0.values.clone()
    }

    #[getter]
    fn retained_buses(&self) -> Vec<String> {
        self.ode.retained_buses().to_vec()
    }

    /// Time derivative of the state vector `x`.
    fn rhs(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        if x.len() != self.x0.len() {
            return Err(value_err(format!("expected {} states, got {}", self.x0.len(), x.len())));
        }
        let mut dx = vec![0.0; x.len()];
        self.ode.rhs(&x, &mut dx).map_err(value_err)?;
        Ok(dx)
    }

    /// Batch run from the operating point.
    #[pyo3(signature = (t_end, events = None, decimation = 1, bus_voltages = false))]
    fn simulate(&self, t_end: f64, events: Option<Vec<String>>, decimation: usize, bus_voltages: bool) -> PyResult<Trajectory> {
        let events = parse_events(events)?;
        let config = SimulationConfig { t_end, ..self.config.clone() };
        let ch = ChannelSelection { states: true, machine_signals: true, bus_voltages, decimation: decimation.max(1) };
        let r = run_batch(self.ode.clone(), &self.x0, &config, &events, &ch).map_err(value_err)?;
        Ok(Trajectory { inner: r.trajectory, warnings: r.warnings })
    }

    /// Modes of the linearized system, one dict per real mode or complex pair.
    fn modes<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let lin = linearize(&self.ode, &self.x0).map_err(value_err)?;
        lin.modes
            .iter()
            .map(|m| {
                let d = PyDict::new(py);
                d.set_item("eigenvalue", (m.eigenvalue.re, m.eigenvalue.im))?;
                d.set_item("freq_hz", m.freq_hz)?;
                d.set_item("damping_ratio", m.damping_ratio)?;
                d.set_item("dominant_state", &m.dominant_state)?;
                d.set_item("participation", m.participation)?;
                d.set_item("zero", m.is_zero)?;
                d.set_item("electromechanical", m.is_electromechanical())?;
                Ok(d)
            })
            .collect()
    }

    /// A stepper starting at the operating point.
    fn start(&self) -> PyResult<Simulation> {
        let sim = rmsim::engine::Simulation::new(self.ode.clone(), self.x0.clone(), &self.config).map_err(value_err)?;
        Ok(Simulation { inner: sim })
    }

    fn __repr__(&self) -> String {
        format!("System({} states, {} retained buses)", self.x0.len(), self.ode.retained_buses().len())
    }
}

#[pyclass(module = "pyrmsim")]
struct Trajectory {
    inner: RecordedTrajectory,
    #[pyo3(get)]
    warnings: Vec<String>,
}

#[pymethods]
impl Trajectory {
    #[getter]
    fn columns(&self) -> Vec<String> {
        self.inner.columns.clone()
    }

    #[getter]
    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner.rows.clone()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times()
    }

    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        self.inner.column(name).ok_or_else(|| PyKeyError::new_err(format!("no column '{name}'")))
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv_string()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Step-by-step simulation with live events.
#[pyclass(module = "pyrmsim")]
struct Simulation {
    inner: rmsim::engine::Simulation,
}

#[pymethods]
impl Simulation {
    #[getter]
    fn time(&self) -> f64 {
        self.inner.time()
    }

    #[getter]
    fn step_index(&self) -> u64 {
        self.inner.step_index()
    }

    #[getter]
    fn state(&self) -> Vec<f64> {
        self.inner.state().values.clone()
    }

    /// Applied events as event-file lines, stamped with their step time.
    #[getter]
    fn log(&self) -> Vec<String> {
        self.inner.log().iter().map(|l| Event::from(l).to_line()).collect()
    }

    #[pyo3(signature = (n = 1))]
    fn step(&mut self, n: usize) -> PyResult<()> {
        for _ in 0..n {
            self.inner.advance().map_err(value_err)?;
        }
        Ok(())
    }

    /// Applies an event now; returns a warning, if any.
    #[pyo3(signature = (kind, target, value = None, imag = None))]
    fn apply(&mut self, kind: &str, target: &str, value: Option<f64>, imag: Option<f64>) -> PyResult<Option<String>> {
        let kind = EventKind::parse(kind).ok_or_else(|| value_err(format!("unknown event kind '{kind}'")))?;
        let ev = Event { t: self.inner.time(), kind, target: target.into(), value, imag };
        let r = self.inner.apply(&ev).map_err(value_err)?;
        Ok(r.warning)
    }

    /// Queues an event-file line for its (snapped) step.
    fn schedule(&mut self, line: &str) -> PyResult<Option<String>> {
        let ev = parse_event_line(line).map_err(value_err)?;
        Ok(self.inner.schedule(ev))
    }

    /// Evaluates a console line such as `get G1.avr.K` or `trip L7-8`.
    fn console(&mut self, text: &str) -> PyResult<String> {
        console_eval(&mut self.inner, text).map_err(PyValueError::new_err)
    }
}

#[pymodule]
pub fn pyrmsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(fixture, m)?)?;
    m.add_class::<System>()?;
    m.add_class::<Trajectory>()?;
    m.add_class::<Simulation>()?;
    Ok(())
}
