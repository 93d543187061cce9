//! Global ODE assembly, equilibrium initialization, integration and events.
//!
//! The network equations are eliminated by solving the (Kron-reduced)
//! admittance system inside every derivative evaluation, so the integrators
//! only ever see `x' = f(x)`.

mod allocation;
mod batch;
mod events;
mod integrate;
mod system;

pub use allocation::{AllocationMap, ModelKind, Slot, StateVector};
pub use batch::{
    run_batch, BatchResult, ChannelSelection, LoggedEvent, RecordedTrajectory, Simulation,
};
pub use events::{parse_event_file, parse_event_line, Event, EventKind, Receipt};
pub use integrate::{Integrator, Method, OdeRhs};
pub use system::{AuxDevice, LinearDevice, MachineSignals, MachineUnit, OdeSystem, Signals};

use num_complex::Complex64;
use thiserror::Error;

use crate::components::ComponentError;
use crate::network::NetworkError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("{device}: {source}")]
    Component {
        device: String,
        #[source]
        source: ComponentError,
    },
    #[error("invalid system: {0}")]
    Invalid(String),
    #[error("initialization residual {residual:.3e} at state '{state}' exceeds tolerance")]
    InitResidual { state: String, residual: f64 },
    #[error("non-finite value in state {index} ('{name}') at t = {t} s")]
    NonFinite { index: usize, name: String, t: f64 },
    #[error("unknown target '{0}'")]
    UnknownTarget(String),
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("state vector has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

/// Run configuration shared by batch and real-time modes.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub method: Method,
    /// Integration step, s.
    pub dt: f64,
    /// Corrector passes for the modified Euler method.
    pub corrector_iters: usize,
    pub t_end: f64,
    /// Shunt admittance added at a faulted bus, pu.
    pub fault_admittance: Complex64,
    /// Buses kept in the reduced network besides generator buses.
    pub keep_buses: Vec<String>,
    /// Tolerances for the adaptive method.
    pub rtol: f64,
    pub atol: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            method: Method::ModifiedEuler,
            dt: 5e-3,
            corrector_iters: 1,
            t_end: 10.0,
            fault_admittance: Complex64::new(1e5, 0.0),
            keep_buses: Vec::new(),
            rtol: 1e-6,
            atol: 1e-8,
        }
    }
}

impl SimulationConfig {
    pub fn check(&self) -> Result<(), EngineError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(EngineError::Invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if self.corrector_iters == 0 {
            return Err(EngineError::Invalid("corrector_iters must be at least 1".into()));
        }
        if self.t_end < 0.0 {
            return Err(EngineError::Invalid("t_end must be non-negative".into()));
        }
        Ok(())
    }
}
