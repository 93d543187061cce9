use super::{lead_lag, DeviceModel};
use crate::model_io::Stab1Record;

/// Speed-input stabilizer: washout `K sT_w/(1 + sT_w)`, two lead-lags and an
/// output clamp at `±H_lim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stab1 {
    pub k: f64,
    pub t_w: f64,
    pub t_1: f64,
    pub t_2: f64,
    pub t_3: f64,
    pub t_4: f64,
    pub h_lim: f64,
}

impl DeviceModel for Stab1 {
    const STATE_NAMES: &'static [&'static str] = &["x_wo", "x_ll1", "x_ll2"];
}

impl From<&Stab1Record> for Stab1 {
    fn from(r: &Stab1Record) -> Self {
        Self {
            k: r.k,
            t_w: r.t_w,
            t_1: r.t_1,
            t_2: r.t_2,
            t_3: r.t_3,
            t_4: r.t_4,
            h_lim: r.h_lim,
        }
    }
}

impl Stab1 {
    /// Derivatives for the speed input; returns the clamped stabilizing signal.
    #[inline]
    pub fn derivatives(&self, x: &[f64], d_omega: f64, dx: &mut [f64]) -> f64 {
        let u = self.k * d_omega;
        let washed = u - x[0];
        dx[0] = (u - x[0]) / self.t_w;
        let (v2, d2) = lead_lag(washed, x[1], self.t_1, self.t_2);
        let (v3, d3) = lead_lag(v2, x[2], self.t_3, self.t_4);
        dx[1] = d2;
        dx[2] = d3;
        v3.clamp(-self.h_lim, self.h_lim)
    }

    pub fn output(&self, x: &[f64], d_omega: f64) -> f64 {
        let mut dx = [0.0; 3];
        self.derivatives(x, d_omega, &mut dx)
    }

    /// Zero state; the stabilizer output is zero at any steady speed.
    pub fn initialize(&self, d_omega: f64) -> [f64; 3] {
        [self.k * d_omega, 0.0, 0.0]
    }
}
