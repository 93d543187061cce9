//! Dynamic RMS (phasor-domain) simulation of multi-machine power systems.
//!
//! The crate is organized bottom-up:
//!
//! - [`model_io`]: grid description files, validation and per-unit helpers.
//! - [`network`]: admittance matrices, Newton-Raphson power flow, Kron reduction.
//! - [`components`]: sixth-order synchronous machine and the SEXS, TGOV1 and
//!   STAB1 control blocks.
//! - [`engine`]: ODE assembly, equilibrium initialization, integrators, events
//!   and batch runs.
//! - [`modal`]: numerical linearization and eigenanalysis.
//! - [`realtime`]: wall-clock synchronized loop and the JSON/WebSocket session
//!   protocol.
//! - [`cli`]: the `rmsim` command-line front end.

pub mod cli;
pub mod components;
pub mod engine;
pub mod modal;
pub mod model_io;
pub mod network;
pub mod realtime;

pub use num_complex::Complex64;

/// Paths to the model files shipped with the crate.
pub mod fixtures {
    use std::path::PathBuf;

    fn dir() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
    }

    pub fn kundur_two_area() -> PathBuf {
        dir().join("kundur_two_area.grid")
    }

    pub fn ieee39() -> PathBuf {
        dir().join("ieee39.grid")
    }

    pub fn smib() -> PathBuf {
        dir().join("smib.grid")
    }
}
