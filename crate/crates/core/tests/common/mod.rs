#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rmsim::engine::{OdeSystem, SimulationConfig, StateVector};
use rmsim::model_io::{read_model, SystemDescription};
use rmsim::network::{solve_power_flow, PowerFlowOptions, PowerFlowSolution};
use rmsim::Complex64;

pub struct Case {
    pub sys: SystemDescription,
    pub pf: PowerFlowSolution,
    pub ode: OdeSystem,
    pub x0: StateVector,
}

pub fn load(path: impl AsRef<Path>, cfg: &SimulationConfig) -> Case {
    let sys = read_model(path).expect("fixture parses");
    let pf = solve_power_flow(&sys, &PowerFlowOptions::default()).expect("power flow converges");
    let mut ode = OdeSystem::build(&sys, &pf, cfg).expect("system builds");
    let x0 = ode.initialize(&pf).expect("equilibrium exists");
    Case { sys, pf, ode, x0 }
}

pub fn kundur() -> Case {
    load(rmsim::fixtures::kundur_two_area(), &SimulationConfig::default())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_c(r: &mut ChaCha8Rng, scale: f64) -> Complex64 {
    Complex64::new(r.random_range(-scale..scale), r.random_range(-scale..scale))
}

/// Gaussian elimination with partial pivoting on a dense row-major copy.
pub fn dense_solve(a: &[Vec<Complex64>], b: &[Complex64]) -> Vec<Complex64> {
    let n = b.len();
    let mut m: Vec<Vec<Complex64>> = a.iter().zip(b).map(|(row, &bi)| {
        let mut r = row.clone();
        r.push(bi);
        r
    }).collect();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| m[i][k].norm().total_cmp(&m[j][k].norm())).unwrap();
        m.swap(k, p);
        for i in k + 1..n {
            let f = m[i][k] / m[k][k];
            for j in k..=n {
                let v = m[k][j];
                m[i][j] -= f * v;
            }
        }
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for i in (0..n).rev() {
        let s: Complex64 = (i + 1..n).map(|j| m[i][j] * x[j]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    x
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).map(|(a, b)| (a.ln(), b.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
