mod common;

use std::f64::consts::PI;

use common::{kundur, rand_c, rng};
use rand::Rng;
use rmsim::components::{Sexs, Stab1, SyncMachine, Tgov1};
use rmsim::engine::{EngineError, Integrator, Method, OdeRhs};
use rmsim::model_io::MachineParams;
use rmsim::Complex64;

/// Wraps a device so the integrator sees `[time, device states...]`, which
/// lets time-varying inputs go through the autonomous interface.
struct Driven<F: Fn(f64, &[f64], &mut [f64])> {
    n: usize,
    f: F,
}

impl<F: Fn(f64, &[f64], &mut [f64])> OdeRhs for Driven<F> {
    fn dim(&self) -> usize {
        self.n + 1
    }

    fn rhs(&self, x: &[f64], dx: &mut [f64]) -> Result<(), EngineError> {
        dx[0] = 1.0;
        (self.f)(x[0], &x[1..], &mut dx[1..]);
        Ok(())
    }
}

fn simulate<F: Fn(f64, &[f64], &mut [f64])>(dev: &Driven<F>, x0: &[f64], h: f64, steps: usize, mut each: impl FnMut(f64, &[f64])) {
    let mut x = vec![0.0];
    x.extend_from_slice(x0);
    let mut int = Integrator::fixed(Method::Rk4);
    for _ in 0..steps {
        int.step(dev, &mut x, h).unwrap();
        each(x[0], &x[1..]);
    }
}

fn kundur_machine() -> SyncMachine {
    let k = kundur();
    SyncMachine::new(k.sys.generators[0].params.clone())
}

#[test]
fn kundur_g1_initializes_from_power_flow() {
    let k = kundur();
    let g = &k.sys.generators[0];
    let b = k.pf.bus(&g.bus).unwrap();
    let scale = g.s_n / k.sys.base_mva;
    let (v, s) = (k.pf.v[b], k.pf.s[b] / scale);
    let m = SyncMachine::new(g.params.clone());
    let eq = m.initialize(v, s).unwrap();
    let i_t = (s / v).conj();
    let (i_d, i_q) = SyncMachine::to_dq(eq.state[0], i_t);
    let mut dx = [0.0; 6];
    m.derivatives(&eq.state, eq.p_m, eq.e_f, i_d, i_q, 2.0 * PI * k.sys.f_n, &mut dx);
    let worst = dx.iter().map(|d| d.abs()).fold(0.0, f64::max);
    assert!(worst < 1e-9, "{dx:?}");
    // P_m covers the delivered power plus stator copper loss.
    let loss = g.params.r * (i_d * i_d + i_q * i_q);
    assert!((eq.p_m - (s.re + loss)).abs() < 1e-12);
}

#[test]
fn mechanical_power_equals_terminal_power_plus_losses() {
    let mut r = rng(21);
    let mut m = kundur_machine();
    for _ in 0..200 {
        m.params.r = r.random_range(0.0..0.01);
        let v = Complex64::from_polar(r.random_range(0.9..1.1), r.random_range(-1.0..1.0));
        let s = Complex64::new(r.random_range(-0.5..1.0), r.random_range(-0.5..0.5));
        let eq = m.initialize(v, s).unwrap();
        let i = (s / v).conj();
        assert!((eq.p_m - s.re - m.params.r * i.norm_sqr()).abs() < 1e-12);
    }
}

#[test]
fn field_voltage_step_drives_only_the_transient_q_voltage() {
    let k = kundur();
    let g = &k.sys.generators[0];
    let b = k.pf.bus(&g.bus).unwrap();
    let m = SyncMachine::new(g.params.clone());
    let s = k.pf.s[b] / (g.s_n / k.sys.base_mva);
    let eq = m.initialize(k.pf.v[b], s).unwrap();
    let (i_d, i_q) = SyncMachine::to_dq(eq.state[0], (s / k.pf.v[b]).conj());
    let mut base = [0.0; 6];
    let mut stepped = [0.0; 6];
    m.derivatives(&eq.state, eq.p_m, eq.e_f, i_d, i_q, 1.0, &mut base);
    m.derivatives(&eq.state, eq.p_m, eq.e_f + 0.1, i_d, i_q, 1.0, &mut stepped);
    assert!((stepped[2] - base[2] - 0.1 / g.params.t_d0_t).abs() < 1e-12);
    for k in [0, 1, 3, 4, 5] {
        assert_eq!(stepped[k], base[k], "state {k}");
    }
}

#[test]
fn norton_pair_reproduces_terminal_current() {
    let mut r = rng(17);
    for _ in 0..1000 {
        let x_st = r.random_range(0.05..0.4);
        let params = MachineParams {
            h: 5.0,
            d: 0.0,
            r: r.random_range(0.0..0.02),
            x_d: 1.8,
            x_q: 1.7,
            x_d_t: 0.5,
            x_q_t: 0.6,
            x_d_st: x_st,
            x_q_st: x_st,
            t_d0_t: 8.0,
            t_q0_t: 0.4,
            t_d0_st: 0.03,
            t_q0_st: 0.05,
        };
        let m = SyncMachine::new(params.clone());
        let v = rand_c(&mut r, 1.2);
        let i = rand_c(&mut r, 3.0);
        let e = v + Complex64::new(params.r, x_st) * i;
        let delta = r.random_range(-PI..PI);
        let (e_d, e_q) = SyncMachine::to_dq(delta, e);
        let x = [delta, 0.0, 0.0, 0.0, e_q, e_d];
        let (i_no, z) = m.norton(&x);
        assert!((i_no - v / z - i).norm() < 1e-12);
    }
}

/// Step response of `K (1 + s T_a) / ((1 + s T_b)(1 + s T_e))`.
fn sexs_step(k: f64, t_a: f64, t_b: f64, t_e: f64, du: f64, t: f64) -> f64 {
    let c_b = -(t_b - t_a) / (t_b - t_e);
    let c_e = -(t_e - t_a) / (t_e - t_b);
    k * du * (1.0 + c_b * (-t / t_b).exp() + c_e * (-t / t_e).exp())
}

#[test]
fn exciter_reference_step_matches_closed_form() {
    let avr = Sexs { k: 100.0, t_a: 1.0, t_b: 10.0, t_e: 0.1, e_min: -10.0, e_max: 10.0 };
    let e_f0 = 1.8;
    let (x0, u0) = avr.initialize(e_f0).unwrap();
    let v_t = 1.0;
    let v_ref = v_t + u0 + 0.01;
    let dev = Driven { n: 2, f: |_t: f64, x: &[f64], dx: &mut [f64]| {
        avr.derivatives(x, v_ref - v_t, dx);
    } };
    let mut worst: f64 = 0.0;
    simulate(&dev, &x0, 1e-3, 3000, |t, x| {
        let want = e_f0 + sexs_step(100.0, 1.0, 10.0, 0.1, 0.01, t);
        worst = worst.max((avr.output(x) - want).abs());
    });
    assert!(worst < 1e-6, "{worst:e}");
}

/// Ramp response of `(1 + s T_2) / ((1 + s T_1)(1 + s T_3))` to `b t`.
fn tgov_ramp(t_1: f64, t_2: f64, t_3: f64, b: f64, t: f64) -> f64 {
    let c_1 = t_1 * (t_1 - t_2) / (t_1 - t_3);
    let c_3 = t_3 * (t_3 - t_2) / (t_3 - t_1);
    b * (t - (t_1 + t_3 - t_2) + c_1 * (-t / t_1).exp() + c_3 * (-t / t_3).exp())
}

#[test]
fn governor_speed_ramp_matches_closed_form() {
    let gov = Tgov1 { r_droop: 0.05, t_1: 0.5, t_2: 1.0, t_3: 2.0, v_min: 0.0, v_max: 1.0 };
    let (x0, p_ref) = gov.initialize(0.5).unwrap();
    let a = 1e-3;
    let dev = Driven { n: 2, f: |t: f64, x: &[f64], dx: &mut [f64]| {
        gov.derivatives(x, p_ref, -a * t, dx);
    } };
    let mut worst: f64 = 0.0;
    simulate(&dev, &x0, 1e-3, 5000, |t, x| {
        let want = 0.5 + tgov_ramp(0.5, 1.0, 2.0, a / 0.05, t);
        worst = worst.max((gov.output(x) - want).abs());
    });
    assert!(worst < 1e-6, "{worst:e}");
}

#[test]
fn stabilizer_frequency_response_at_one_hertz() {
    let pss = Stab1 { k: 20.0, t_w: 10.0, t_1: 0.05, t_2: 0.02, t_3: 3.0, t_4: 5.4, h_lim: 1e3 };
    let w = 2.0 * PI;
    let amp = 1e-3;
    let s = Complex64::new(0.0, w);
    let one = Complex64::new(1.0, 0.0);
    let h = pss.k * s * pss.t_w / (one + s * pss.t_w) * (one + s * pss.t_1) / (one + s * pss.t_2)
        * (one + s * pss.t_3)
        / (one + s * pss.t_4);
    let dev = Driven { n: 3, f: |t: f64, x: &[f64], dx: &mut [f64]| {
        pss.derivatives(x, amp * (w * t).sin(), dx);
    } };
    // Project the output onto sin and cos over the last four cycles.
    let h_step = 1e-3;
    let (t_from, t_to) = (96.0, 100.0);
    let (mut a_s, mut a_c, mut count) = (0.0, 0.0, 0usize);
    simulate(&dev, &[0.0; 3], h_step, 100_000, |t, x| {
        if t > t_from + 0.5 * h_step && t <= t_to + 0.5 * h_step {
            let y = pss.output(x, amp * (w * t).sin());
            a_s += y * (w * t).sin();
            a_c += y * (w * t).cos();
            count += 1;
        }
    });
    let gain = Complex64::new(a_s, a_c) * (2.0 / count as f64) / amp;
    assert!((gain.norm() - h.norm()).abs() / h.norm() < 0.01, "{} vs {}", gain.norm(), h.norm());
    assert!((gain.arg() - h.arg()).abs() < 0.01, "{} vs {}", gain.arg(), h.arg());
}
