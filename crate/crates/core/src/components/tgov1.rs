use super::{lead_lag, limited, ComponentError, DeviceModel};
use crate::model_io::Tgov1Record;

/// Steam turbine-governor: droop into a valve lag `1/(1 + sT_1)` with
/// position limits, then the reheater lead-lag `(1 + sT_2)/(1 + sT_3)`.
/// Quantities are on the machine base.
#[derive(Debug, Clone, PartialEq)]
pub struct Tgov1 {
    pub r_droop: f64,
    pub t_1: f64,
    pub t_2: f64,
    pub t_3: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl DeviceModel for Tgov1 {
    const STATE_NAMES: &'static [&'static str] = &["x_valve", "x_ll"];
}

impl From<&Tgov1Record> for Tgov1 {
    fn from(r: &Tgov1Record) -> Self {
        Self {
            r_droop: r.r_droop,
            t_1: r.t_1,
            t_2: r.t_2,
            t_3: r.t_3,
            v_min: r.v_min,
            v_max: r.v_max,
        }
    }
}

impl Tgov1 {
    #[inline]
    pub fn output(&self, x: &[f64]) -> f64 {
        let v = x[0].clamp(self.v_min, self.v_max);
        lead_lag(v, x[1], self.t_2, self.t_3).0
    }

    /// Derivatives for reference `p_ref` and speed deviation; returns P_m.
    #[inline]
    pub fn derivatives(&self, x: &[f64], p_ref: f64, d_omega: f64, dx: &mut [f64]) -> f64 {
        let u = p_ref - d_omega / self.r_droop;
        let (v, d_valve) = limited(x[0], (u - x[0]) / self.t_1, self.v_min, self.v_max);
        let (p_m, d_ll) = lead_lag(v, x[1], self.t_2, self.t_3);
        dx[0] = d_valve;
        dx[1] = d_ll;
        p_m
    }

    /// States and reference that deliver `p_m` at zero speed deviation.
    pub fn initialize(&self, p_m: f64) -> Result<([f64; 2], f64), ComponentError> {
        if !(self.v_min..=self.v_max).contains(&p_m) {
            return Err(ComponentError::OutsideLimits {
                value: p_m,
                min: self.v_min,
                max: self.v_max,
            });
        }
        Ok(([p_m, p_m], p_m))
    }
}
