use super::{lead_lag, limited, ComponentError, DeviceModel};
use crate::model_io::SexsRecord;

/// Simplified excitation system: lead-lag `(1 + sT_a)/(1 + sT_b)` followed by
/// `K/(1 + sT_e)` with a non-windup limit on the field voltage state.
#[derive(Debug, Clone, PartialEq)]
pub struct Sexs {
    pub k: f64,
    pub t_a: f64,
    pub t_b: f64,
    pub t_e: f64,
    pub e_min: f64,
    pub e_max: f64,
}

impl DeviceModel for Sexs {
    const STATE_NAMES: &'static [&'static str] = &["x_ll", "x_e"];
}

impl From<&SexsRecord> for Sexs {
    fn from(r: &SexsRecord) -> Self {
        Self {
            k: r.k,
            t_a: r.t_a,
            t_b: r.t_b,
            t_e: r.t_e,
            e_min: r.e_min,
            e_max: r.e_max,
        }
    }
}

impl Sexs {
    /// Field voltage seen by the machine.
    #[inline]
    pub fn output(&self, x: &[f64]) -> f64 {
        x[1].clamp(self.e_min, self.e_max)
    }

    /// Derivatives for the error signal `u = V_ref - V_t + V_pss`; returns E_f.
    #[inline]
    pub fn derivatives(&self, x: &[f64], u: f64, dx: &mut [f64]) -> f64 {
        let (y, d_ll) = lead_lag(u, x[0], self.t_a, self.t_b);
        let (e_f, d_e) = limited(x[1], (self.k * y - x[1]) / self.t_e, self.e_min, self.e_max);
        dx[0] = d_ll;
        dx[1] = d_e;
        e_f
    }

    /// States and steady error signal that hold `e_f` constant.
    pub fn initialize(&self, e_f: f64) -> Result<([f64; 2], f64), ComponentError> {
        if !(self.e_min..=self.e_max).contains(&e_f) {
            return Err(ComponentError::OutsideLimits {
                value: e_f,
                min: self.e_min,
                max: self.e_max,
            });
        }
        let u = e_f / self.k;
        Ok(([u, e_f], u))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn avr() -> Sexs {
        Sexs {
            k: 100.0,
            t_a: 2.0,
            t_b: 10.0,
            t_e: 0.5,
            e_min: -3.0,
            e_max: 3.0,
        }
    }

    #[test]
    fn steady_state_holds() {
        let a = avr();
        let (x, u) = a.initialize(1.8).unwrap();
        let mut dx = [1.0; 2];
        assert_eq!(a.derivatives(&x, u, &mut dx), 1.8);
        assert!(dx.iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn unity_lead_lag_reduces_to_first_order() {
        let mut a = avr();
        a.t_a = a.t_b;
        let x = [0.0, 1.0];
        let mut dx = [0.0; 2];
        a.derivatives(&x, 0.02, &mut dx);
        assert_eq!(dx[1], (100.0 * 0.02 - 1.0) / 0.5);
    }

    #[test]
    fn limit_violation_on_init() {
        assert!(matches!(
            avr().initialize(3.5),
            Err(ComponentError::OutsideLimits { .. })
        ));
    }

    #[test]
    fn anti_windup_at_ceiling() {
        let a = avr();
        let mut dx = [0.0; 2];
        let e_f = a.derivatives(&[0.5, 3.2], 0.5, &mut dx);
        assert_eq!(e_f, 3.0);
        assert_eq!(dx[1], 0.0);
    }
}
