//! Nodal admittance matrices, Newton-Raphson power flow and Kron reduction.

mod kron;
mod powerflow;
mod ybus;

pub use kron::{kron_reduce, kron_reduce_by_name, ReductionMap};
pub use powerflow::{solve_power_flow, PowerFlowOptions, PowerFlowSolution};
pub use ybus::{
    branch_stamp, build_ybus, generator_norton_impedance, load_admittance, AdmittanceMatrix,
    Delta,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("branch '{0}' has zero impedance")]
    ZeroImpedance(String),
    #[error("bus '{0}' is isolated (empty admittance row)")]
    IsolatedBus(String),
    #[error("admittance matrix is singular ({0})")]
    Singular(String),
    #[error("eliminated bus '{0}' has no connection to the retained set")]
    DisconnectedEliminated(String),
    #[error("dimension mismatch: matrix has {expected} rows, vector has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index ({row}, {col}) out of range for dimension {dim}")]
    IndexOutOfRange { row: usize, col: usize, dim: usize },
    #[error("unknown bus '{0}'")]
    UnknownBus(String),
    #[error("power flow did not converge in {iterations} iterations (mismatch trace {trace:?})")]
    NonConvergence { iterations: usize, trace: Vec<f64> },
    #[error("power flow Jacobian is singular at iteration {0}")]
    SingularJacobian(usize),
    #[error("power flow needs exactly one slack bus")]
    NoSlack,
}
