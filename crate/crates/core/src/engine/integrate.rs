use serde::{Deserialize, Serialize};

use super::EngineError;

/// Autonomous ODE right-hand side `x' = f(x)`.
pub trait OdeRhs {
    fn dim(&self) -> usize;
    fn rhs(&self, x: &[f64], dx: &mut [f64]) -> Result<(), EngineError>;

    /// Clamps limited states back onto their bounds after an accepted step.
    /// Returns whether anything moved.
    fn project(&self, _x: &mut [f64]) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Euler,
    ModifiedEuler,
    Rk4,
    /// Dormand-Prince 5(4) with PI step-size control; a call to
    /// [`Integrator::step`] covers the requested interval in as many
    /// internal steps as the tolerance needs.
    Adaptive,
}

impl Method {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "euler" => Some(Method::Euler),
            "modified_euler" | "heun" => Some(Method::ModifiedEuler),
            "rk4" => Some(Method::Rk4),
            "adaptive" | "rk45" | "dopri5" => Some(Method::Adaptive),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Euler => "euler",
            Method::ModifiedEuler => "modified_euler",
            Method::Rk4 => "rk4",
            Method::Adaptive => "adaptive",
        }
    }
}

// Dormand-Prince coefficients.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the 5th and embedded 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Fixed-step and adaptive explicit integrators with reusable work buffers.
#[derive(Debug, Clone)]
pub struct Integrator {
    pub method: Method,
    pub corrector_iters: usize,
    pub rtol: f64,
    pub atol: f64,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    h_next: Option<f64>,
    err_prev: f64,
    /// Internal steps accepted by the adaptive method so far.
    pub accepted: usize,
    pub rejected: usize,
}

impl Integrator {
    pub fn new(method: Method, corrector_iters: usize, rtol: f64, atol: f64) -> Self {
        Self {
            method,
            corrector_iters: corrector_iters.max(1),
            rtol,
            atol,
            k: Default::default(),
            tmp: Vec::new(),
            h_next: None,
            err_prev: 1e-4,
            accepted: 0,
            rejected: 0,
        }
    }

    pub fn fixed(method: Method) -> Self {
        Self::new(method, 1, 1e-6, 1e-8)
    }

    fn ensure(&mut self, n: usize) {
        if self.tmp.len() != n {
            for k in &mut self.k {
                k.resize(n, 0.0);
            }
            self.tmp.resize(n, 0.0);
        }
    }

    /// Advances `x` by `dt`.
    pub fn step<S: OdeRhs + ?Sized>(
        &mut self,
        sys: &S,
        x: &mut [f64],
        dt: f64,
    ) -> Result<(), EngineError> {
        let n = x.len();
        self.ensure(n);
        match self.method {
            Method::Euler => {
                sys.rhs(x, &mut self.k[0])?;
                for i in 0..n {
                    x[i] += dt * self.k[0][i];
                }
            }
            Method::ModifiedEuler => {
                let [f0, fp, xp, ..] = &mut self.k;
                sys.rhs(x, f0)?;
                for i in 0..n {
                    xp[i] = x[i] + dt * f0[i];
                }
                for _ in 0..self.corrector_iters {
                    sys.rhs(xp, fp)?;
                    for i in 0..n {
                        xp[i] = x[i] + 0.5 * dt * (f0[i] + fp[i]);
                    }
                }
                x.copy_from_slice(xp);
            }
            Method::Rk4 => {
                let [k1, k2, k3, k4, ..] = &mut self.k;
                let tmp = &mut self.tmp;
                sys.rhs(x, k1)?;
                for i in 0..n {
                    tmp[i] = x[i] + 0.5 * dt * k1[i];
                }
                sys.rhs(tmp, k2)?;
                for i in 0..n {
                    tmp[i] = x[i] + 0.5 * dt * k2[i];
                }
                sys.rhs(tmp, k3)?;
                for i in 0..n {
                    tmp[i] = x[i] + dt * k3[i];
                }
                sys.rhs(tmp, k4)?;
                for i in 0..n {
                    x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
            Method::Adaptive => return self.adaptive(sys, x, dt),
        }
        sys.project(x);
        Ok(())
    }

    fn error_norm(&self, x: &[f64], x_new: &[f64], err: &[f64]) -> f64 {
        let n = x.len().max(1);
        let sum: f64 = (0..x.len())
            .map(|i| {
                let sc = self.atol + self.rtol * x[i].abs().max(x_new[i].abs());
                (err[i] / sc).powi(2)
            })
            .sum();
        (sum / n as f64).sqrt()
    }

    fn adaptive<S: OdeRhs + ?Sized>(
        &mut self,
        sys: &S,
        x: &mut [f64],
        span: f64,
    ) -> Result<(), EngineError> {
        let n = x.len();
        if n == 0 {
            return Ok(());
        }
        let mut t = 0.0;
        let mut h = self.h_next.unwrap_or(span).min(span);
        let mut xn = vec![0.0; n];
        let mut err = vec![0.0; n];
        sys.rhs(x, &mut self.k[0])?;
        while t < span {
            let last = t + h >= span * (1.0 - 1e-12);
            let h_try = if last { span - t } else { h };
            let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
            let tmp = &mut self.tmp;
            for i in 0..n {
                tmp[i] = x[i] + h_try * A21 * k1[i];
            }
            sys.rhs(tmp, k2)?;
            for i in 0..n {
                tmp[i] = x[i] + h_try * (A31 * k1[i] + A32 * k2[i]);
            }
            sys.rhs(tmp, k3)?;
            for i in 0..n {
                tmp[i] = x[i] + h_try * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            sys.rhs(tmp, k4)?;
            for i in 0..n {
                tmp[i] =
                    x[i] + h_try * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            sys.rhs(tmp, k5)?;
            for i in 0..n {
                tmp[i] = x[i]
                    + h_try
                        * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            sys.rhs(tmp, k6)?;
            for i in 0..n {
                xn[i] = x[i]
                    + h_try * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
            }
            sys.rhs(&xn, k7)?;
            for i in 0..n {
                err[i] = h_try
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i]
                        + E7 * k7[i]);
            }
            let e = self.error_norm(x, &xn, &err);
            let _ = (C2, C3, C4, C5);
            if e <= 1.0 || !e.is_finite() && h_try < 1e-14 {
                t += h_try;
                x.copy_from_slice(&xn);
                if sys.project(x) {
                    sys.rhs(x, &mut self.k[0])?;
                } else {
                    // First same as last.
                    let (first, rest) = self.k.split_at_mut(1);
                    first[0].copy_from_slice(&rest[5]);
                }
                self.accepted += 1;
                let e = e.max(1e-10);
                let fac = 0.9 * e.powf(-0.7 / 5.0) * self.err_prev.powf(0.4 / 5.0);
                self.err_prev = e;
                if !last {
                    h = h_try * fac.clamp(0.2, 5.0);
                } else {
                    // Remember the natural step for the next interval.
                    self.h_next = Some((h_try * fac.clamp(0.2, 5.0)).max(h));
                }
            } else {
                self.rejected += 1;
                let fac = if e.is_finite() {
                    (0.9 * e.powf(-0.2)).clamp(0.1, 0.9)
                } else {
                    0.1
                };
                h = h_try * fac;
                if h < 1e-14 * span.max(1.0) {
                    return Err(EngineError::Invalid(
                        "adaptive step size underflow".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}
