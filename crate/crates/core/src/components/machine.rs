//! Sixth-order synchronous machine in the transient/subtransient voltage
//! formulation, without saturation and with `X_d'' = X_q''`.
//!
//! Per-unit conventions: speed deviation `d_omega` is in pu of synchronous
//! speed, so `delta' = omega_s * d_omega`; the inertia coefficient is `2H`.
//! The d-q frame places the q axis at the rotor angle:
//! `F_network = (F_d + j F_q) e^{j(delta - pi/2)}`.

use num_complex::Complex64;

use super::{ComponentError, DeviceModel};
use crate::model_io::MachineParams;

pub const DELTA: usize = 0;
pub const D_OMEGA: usize = 1;
pub const E_Q_T: usize = 2;
pub const E_D_T: usize = 3;
pub const E_Q_ST: usize = 4;
pub const E_D_ST: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SyncMachine {
    /// Parameters on the machine base.
    pub params: MachineParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachineEquilibrium {
    pub state: [f64; 6],
    pub p_m: f64,
    pub e_f: f64,
}

impl DeviceModel for SyncMachine {
    const STATE_NAMES: &'static [&'static str] =
        &["delta", "d_omega", "e_q_t", "e_d_t", "e_q_st", "e_d_st"];
}

impl SyncMachine {
    pub fn new(params: MachineParams) -> Self {
        Self { params }
    }

    /// Common subtransient reactance `X''`.
    pub fn x_st(&self) -> f64 {
        self.params.x_d_st
    }

    /// Stator impedance `R + jX''` (machine base).
    pub fn z_no(&self) -> Complex64 {
        Complex64::new(self.params.r, self.x_st())
    }

    /// Network-frame phasor to (d, q) components.
    #[inline]
    pub fn to_dq(delta: f64, f: Complex64) -> (f64, f64) {
        let r = f * Complex64::new(delta.sin(), delta.cos());
        (r.re, r.im)
    }

    /// (d, q) components to a network-frame phasor.
    #[inline]
    pub fn from_dq(delta: f64, d: f64, q: f64) -> Complex64 {
        Complex64::new(d, q) * Complex64::new(delta.sin(), -delta.cos())
    }

    /// Subtransient EMF in the network frame.
    #[inline]
    pub fn e_st(x: &[f64]) -> Complex64 {
        Self::from_dq(x[DELTA], x[E_D_ST], x[E_Q_ST])
    }

    /// Norton source `(I_no, Z_no)` on the machine base: `I_no = E'' / Z_no`.
    pub fn norton(&self, x: &[f64]) -> (Complex64, Complex64) {
        let z = self.z_no();
        (Self::e_st(x) / z, z)
    }

    /// Air-gap power `E_d'' I_d + E_q'' I_q`.
    #[inline]
    pub fn electrical_power(x: &[f64], i_d: f64, i_q: f64) -> f64 {
        x[E_D_ST] * i_d + x[E_Q_ST] * i_q
    }

    /// Writes the six state derivatives into `dx`.
    #[inline]
    #[allow(clippy::too_many_arguments)]
    pub fn derivatives(
        &self,
        x: &[f64],
        p_m: f64,
        e_f: f64,
        i_d: f64,
        i_q: f64,
        omega_s: f64,
        dx: &mut [f64],
    ) {
        let p = &self.params;
        let x_st = self.x_st();
        let p_e = Self::electrical_power(x, i_d, i_q);
        dx[DELTA] = omega_s * x[D_OMEGA];
        dx[D_OMEGA] = (p_m - p_e - p.d * x[D_OMEGA]) / (2.0 * p.h);
        dx[E_Q_T] = (e_f - x[E_Q_T] - i_d * (p.x_d - p.x_d_t)) / p.t_d0_t;
        dx[E_D_T] = (-x[E_D_T] + i_q * (p.x_q - p.x_q_t)) / p.t_q0_t;
        dx[E_Q_ST] = (x[E_Q_T] - x[E_Q_ST] - i_d * (p.x_d_t - x_st)) / p.t_d0_st;
        dx[E_D_ST] = (x[E_D_T] - x[E_D_ST] + i_q * (p.x_q_t - x_st)) / p.t_q0_st;
    }

    /// Equilibrium from terminal voltage and delivered power (machine base).
    pub fn initialize(
        &self,
        v_t: Complex64,
        s_t: Complex64,
    ) -> Result<MachineEquilibrium, ComponentError> {
        if v_t.norm() == 0.0 {
            return Err(ComponentError::ZeroVoltage);
        }
        let p = &self.params;
        let x_st = self.x_st();
        let i_t = (s_t / v_t).conj();
        let e_q_locator = v_t + Complex64::new(p.r, p.x_q) * i_t;
        // With no current the locator is V itself; its argument is then arg(V).
        let delta = e_q_locator.arg();
        let (v_d, v_q) = Self::to_dq(delta, v_t);
        let (i_d, i_q) = Self::to_dq(delta, i_t);

        let e_d_st = v_d + p.r * i_d - x_st * i_q;
        let e_q_st = v_q + p.r * i_q + x_st * i_d;
        let e_d_t = (p.x_q - p.x_q_t) * i_q;
        let e_q_t = e_q_st + (p.x_d_t - x_st) * i_d;
        let e_f = e_q_t + (p.x_d - p.x_d_t) * i_d;

        let state = [delta, 0.0, e_q_t, e_d_t, e_q_st, e_d_st];
        let p_m = Self::electrical_power(&state, i_d, i_q);

        let mut dx = [0.0; 6];
        self.derivatives(&state, p_m, e_f, i_d, i_q, 1.0, &mut dx);
        let scale = [1.0, 1.0, p.t_d0_t, p.t_q0_t, p.t_d0_st, p.t_q0_st];
        for (k, (&d, &s)) in dx.iter().zip(&scale).enumerate() {
            // Compare the undivided residual so long time constants do not
            // hide errors.
            if (d * s).abs() > 1e-9 {
                return Err(ComponentError::Residual {
                    equation: Self::STATE_NAMES[k],
                    residual: d * s,
                });
            }
        }
        Ok(MachineEquilibrium { state, p_m, e_f })
    }
}
