//! Dynamic device models.
//!
//! Every model exposes its state layout through [`DeviceModel`], an
//! equilibrium initializer, and a derivative function over its own state
//! slice. Signal wiring (which exciter feeds which machine) is done by the
//! engine.

mod machine;
mod sexs;
mod stab1;
mod tgov1;

pub use machine::{MachineEquilibrium, SyncMachine};
pub use sexs::Sexs;
pub use stab1::Stab1;
pub use tgov1::Tgov1;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComponentError {
    #[error("terminal voltage is zero")]
    ZeroVoltage,
    #[error("initialization residual {residual:.3e} in equation '{equation}'")]
    Residual { equation: &'static str, residual: f64 },
    #[error("required steady output {value} lies outside [{min}, {max}]")]
    OutsideLimits { value: f64, min: f64, max: f64 },
}

/// Static state layout of a device model.
pub trait DeviceModel {
    const STATE_NAMES: &'static [&'static str];

    fn n_states() -> usize {
        Self::STATE_NAMES.len()
    }
}

/// Lead-lag `(1 + s T_num) / (1 + s T_den)` realized with one state and
/// direct feedthrough: `y = a u + (1 - a) x`, `x' = (u - x) / T_den`.
#[inline]
pub(crate) fn lead_lag(u: f64, x: f64, t_num: f64, t_den: f64) -> (f64, f64) {
    let a = t_num / t_den;
    (a * u + (1.0 - a) * x, (u - x) / t_den)
}

/// Non-windup limit on an integrator state: the state is read clamped and
/// its derivative may not push further past a limit.
#[inline]
pub(crate) fn limited(x: f64, dx: f64, lo: f64, hi: f64) -> (f64, f64) {
    let dx = if (x >= hi && dx > 0.0) || (x <= lo && dx < 0.0) {
        0.0
    } else {
        dx
    };
    (x.clamp(lo, hi), dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lead_lag_equal_time_constants_pass_through() {
        let (y, dx) = lead_lag(0.7, -3.0, 2.0, 2.0);
        assert_eq!(y, 0.7);
        assert!(dx > 0.0);
    }

    #[test]
    fn limiter_blocks_outward_motion_only() {
        assert_eq!(limited(3.5, 1.0, -3.0, 3.0), (3.0, 0.0));
        assert_eq!(limited(3.5, -1.0, -3.0, 3.0), (3.0, -1.0));
        assert_eq!(limited(-3.0, -2.0, -3.0, 3.0), (-3.0, 0.0));
        assert_eq!(limited(0.0, 2.0, -3.0, 3.0), (0.0, 2.0));
    }
}
