use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{build_ybus, NetworkError};
use crate::model_io::{BusKind, SystemDescription};

#[derive(Debug, Clone, Copy)]
pub struct PowerFlowOptions {
    /// Convergence threshold on the largest P/Q mismatch, pu.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub bus_names: Vec<String>,
    /// Complex bus voltage, pu.
    pub v: Vec<Complex64>,
    /// Net complex power injected into the network at each bus, pu.
    pub s: Vec<Complex64>,
    pub iterations: usize,
    pub max_mismatch: f64,
}

impl PowerFlowSolution {
    pub fn bus(&self, name: &str) -> Option<usize> {
        self.bus_names.iter().position(|n| n == name)
    }
}

struct Spec {
    p: Vec<f64>,
    q: Vec<f64>,
    pv: Vec<usize>,
    pq: Vec<usize>,
    v0: Vec<Complex64>,
}

fn specification(sys: &SystemDescription) -> Result<Spec, NetworkError> {
    let n = sys.buses.len();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut vmag = vec![1.0; n];
    for g in &sys.generators {
        let i = sys
            .bus_index(&g.bus)
            .ok_or_else(|| NetworkError::UnknownBus(g.bus.clone()))?;
        p[i] += g.p_set;
        vmag[i] = g.v_set;
    }
    for l in &sys.loads {
        let i = sys
            .bus_index(&l.bus)
            .ok_or_else(|| NetworkError::UnknownBus(l.bus.clone()))?;
        p[i] -= l.p;
        q[i] -= l.q;
    }
    let mut slack = None;
    let mut pv = Vec::new();
    let mut pq = Vec::new();
    for (i, b) in sys.buses.iter().enumerate() {
        match b.kind {
            BusKind::Slack => {
                if slack.replace(i).is_some() {
                    return Err(NetworkError::NoSlack);
                }
            }
            BusKind::PV => pv.push(i),
            BusKind::PQ => {
                pq.push(i);
                vmag[i] = 1.0;
            }
        }
    }
    slack.ok_or(NetworkError::NoSlack)?;
    let v0 = vmag.iter().map(|&m| Complex64::new(m, 0.0)).collect();
    Ok(Spec {
        p,
        q,
        pv,
        pq,
        v0,
    })
}

fn injections(y: &DMatrix<Complex64>, v: &[Complex64]) -> Vec<Complex64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let mut cur = Complex64::new(0.0, 0.0);
            for j in 0..n {
                cur += y[(i, j)] * v[j];
            }
            v[i] * cur.conj()
        })
        .collect()
}

/// Solves the AC power flow by full Newton-Raphson in polar coordinates.
///
/// The slack bus holds its generator's voltage setpoint at angle zero (1.0 pu
/// when no generator is attached). PV buses hold magnitude and active power,
/// PQ buses active and reactive power. Loads enter as constant power here;
/// only the branch network is used for the mismatch equations.
pub fn solve_power_flow(
    sys: &SystemDescription,
    opts: &PowerFlowOptions,
) -> Result<PowerFlowSolution, NetworkError> {
    let spec = specification(sys)?;
    let y = build_ybus(sys, None, false)?.to_dense();
    let n = sys.buses.len();

    // Unknowns: angles at pv ∪ pq, then magnitudes at pq.
    let ang: Vec<usize> = spec.pv.iter().chain(&spec.pq).copied().collect();
    let nang = ang.len();
    let nunk = nang + spec.pq.len();
    let mut va: Vec<f64> = vec![0.0; n];
    let mut vm: Vec<f64> = spec.v0.iter().map(|v| v.re).collect();
    let voltages = |vm: &[f64], va: &[f64]| -> Vec<Complex64> {
        (0..n).map(|i| Complex64::from_polar(vm[i], va[i])).collect()
    };

    let mismatch = |v: &[Complex64]| -> (DVector<f64>, f64) {
        let s = injections(&y, v);
        let mut f = DVector::zeros(nunk);
        for (k, &i) in ang.iter().enumerate() {
            f[k] = s[i].re - spec.p[i];
        }
        for (k, &i) in spec.pq.iter().enumerate() {
            f[nang + k] = s[i].im - spec.q[i];
        }
        let m = f.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        (f, m)
    };

    let mut v = voltages(&vm, &va);
    let (mut f, mut max_mis) = mismatch(&v);
    let mut trace = vec![max_mis];
    let mut iterations = 0;
    while max_mis >= opts.tol {
        if iterations == opts.max_iter {
            return Err(NetworkError::NonConvergence { iterations, trace });
        }
        iterations += 1;

        // dS/dVa = j diag(V) conj(diag(I) - Y diag(V))
        // dS/dVm = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
        let ibus: Vec<Complex64> = (0..n)
            .map(|i| (0..n).map(|j| y[(i, j)] * v[j]).sum())
            .collect();
        let vnorm: Vec<Complex64> = v.iter().map(|x| x / x.norm()).collect();
        let ds_dva = |i: usize, j: usize| -> Complex64 {
            let diag = if i == j { ibus[i] } else { Complex64::new(0.0, 0.0) };
            Complex64::i() * v[i] * (diag - y[(i, j)] * v[j]).conj()
        };
        let ds_dvm = |i: usize, j: usize| -> Complex64 {
            let mut d = v[i] * (y[(i, j)] * vnorm[j]).conj();
            if i == j {
                d += ibus[i].conj() * vnorm[i];
            }
            d
        };
        let mut jac = DMatrix::<f64>::zeros(nunk, nunk);
        for (r, &i) in ang.iter().enumerate() {
            for (c, &j) in ang.iter().enumerate() {
                jac[(r, c)] = ds_dva(i, j).re;
            }
            for (c, &j) in spec.pq.iter().enumerate() {
                jac[(r, nang + c)] = ds_dvm(i, j).re;
            }
        }
        for (r, &i) in spec.pq.iter().enumerate() {
            for (c, &j) in ang.iter().enumerate() {
                jac[(nang + r, c)] = ds_dva(i, j).im;
            }
            for (c, &j) in spec.pq.iter().enumerate() {
                jac[(nang + r, nang + c)] = ds_dvm(i, j).im;
            }
        }
        let dx = jac
            .lu()
            .solve(&f)
            .ok_or(NetworkError::SingularJacobian(iterations))?;
        for (k, &i) in ang.iter().enumerate() {
            va[i] -= dx[k];
        }
        for (k, &i) in spec.pq.iter().enumerate() {
            vm[i] -= dx[nang + k];
        }
        v = voltages(&vm, &va);
        (f, max_mis) = mismatch(&v);
        trace.push(max_mis);
        if !max_mis.is_finite() {
            return Err(NetworkError::NonConvergence { iterations, trace });
        }
    }
    let s = injections(&y, &v);
    Ok(PowerFlowSolution {
        bus_names: sys.buses.iter().map(|b| b.name.clone()).collect(),
        v,
        s,
        iterations,
        max_mismatch: max_mis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_io::parse_model;

    #[test]
    fn single_slack_bus() {
        let sys = parse_model("[buses]\nname v_n type\nB1 20 slack\n[branches]\n[generators]\n")
            .unwrap();
        let pf = solve_power_flow(&sys, &PowerFlowOptions::default()).unwrap();
        assert_eq!(pf.v, vec![Complex64::new(1.0, 0.0)]);
        assert_eq!(pf.s, vec![Complex64::new(0.0, 0.0)]);
        assert_eq!(pf.iterations, 0);
    }

    /// Reference for the two-bus case from bisection on the reduced power
    /// equations: with Q2 = 0 on a lossless line, V2 = cos(th) and
    /// V2 sin(th) / x = P2.
    fn two_bus_oracle(p2: f64, x: f64) -> (f64, f64) {
        let g = |th: f64| th.cos() * th.sin() / x - p2;
        let (mut lo, mut hi) = (-std::f64::consts::FRAC_PI_4, 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(lo) * g(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let th = 0.5 * (lo + hi);
        (th.cos(), th)
    }

    #[test]
    fn two_bus_matches_bisection_oracle() {
        let sys = parse_model(
            "[buses]\nname v_n type\nB1 20 slack\nB2 20 PQ\n\
             [branches]\nname from to r x\nL1 B1 B2 0 0.1\n[generators]\n\
             [loads]\nname bus P Q\nD2 B2 0.5 0\n",
        )
        .unwrap();
        let pf = solve_power_flow(&sys, &PowerFlowOptions::default()).unwrap();
        let (vm, va) = two_bus_oracle(-0.5, 0.1);
        assert!((pf.v[1].norm() - vm).abs() < 1e-9, "{} vs {vm}", pf.v[1].norm());
        assert!((pf.v[1].arg() - va).abs() < 1e-9);
        assert_eq!(pf.v[0], Complex64::new(1.0, 0.0));
        assert!(pf.max_mismatch < 1e-8);
        // lossless line: slack supplies exactly the load
        assert!((pf.s[0].re - 0.5).abs() < 1e-8);
    }

    #[test]
    fn non_convergence_reports_trace() {
        // Far beyond the two-bus transfer limit of 1/(2x) = 5 pu.
        let sys = parse_model(
            "[buses]\nname v_n type\nB1 20 slack\nB2 20 PQ\n\
             [branches]\nname from to r x\nL1 B1 B2 0 0.1\n[generators]\n\
             [loads]\nname bus P Q\nD2 B2 50 0\n",
        )
        .unwrap();
        match solve_power_flow(&sys, &PowerFlowOptions::default()) {
            Err(NetworkError::NonConvergence { trace, .. }) => assert!(!trace.is_empty()),
            Err(NetworkError::SingularJacobian(_)) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
