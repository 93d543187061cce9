//! Small-signal analysis: numerical linearization of `x' = f(x)` around an
//! operating point and dense eigenanalysis of the resulting matrix.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;
use thiserror::Error;

use crate::engine::{EngineError, OdeRhs, OdeSystem, StateVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModalError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("eigensolver did not converge: {0}")]
    NoConvergence(String),
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Difference {
    Central,
    Forward,
}

/// Default relative perturbation; scaled by `max(1, |x_j|)`.
pub const DEFAULT_EPS: f64 = 1e-6;

/// Eigenvalues with modulus below this are reported as the zero mode.
pub const ZERO_MODE_TOL: f64 = 1e-5;

/// Pairs with a smaller frequency are split real eigenvalues, not oscillations.
pub const MIN_OSC_HZ: f64 = 0.01;

/// Finite-difference Jacobian `A = df/dx` at `x0`.
pub fn numerical_jacobian<S: OdeRhs + ?Sized>(
    sys: &S,
    x0: &[f64],
    scheme: Difference,
    eps: f64,
) -> Result<DMatrix<f64>, EngineError> {
    let n = sys.dim();
    if x0.len() != n {
        return Err(EngineError::Dimension { expected: n, got: x0.len() });
    }
    let mut f0 = vec![0.0; n];
    sys.rhs(x0, &mut f0)?;
    let r0 = f0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if r0 > 1e-6 {
        log::warn!("linearizing away from equilibrium: |f(x0)| = {r0:.3e}");
    }
    let mut a = DMatrix::zeros(n, n);
    let mut x = x0.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..n {
        let h = eps * x0[j].abs().max(1.0);
        x[j] = x0[j] + h;
        sys.rhs(&x, &mut fp)?;
        match scheme {
            Difference::Central => {
                x[j] = x0[j] - h;
                sys.rhs(&x, &mut fm)?;
                for i in 0..n {
                    a[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
                }
            }
            Difference::Forward => {
                for i in 0..n {
                    a[(i, j)] = (fp[i] - f0[i]) / h;
                }
            }
        }
        x[j] = x0[j];
    }
    Ok(a)
}

/// One eigenvalue with its derived metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    /// Index into [`LinearizedSystem::eigenvalues`].
    pub index: usize,
    pub eigenvalue: Complex64,
    pub freq_hz: f64,
    pub damping_ratio: f64,
    /// State with the largest participation factor.
    pub dominant_state: String,
    pub dominant_index: usize,
    /// Participation factor of the dominant state.
    pub participation: f64,
    pub is_zero: bool,
    /// `|Σ H_i S_i v_ω,i| / Σ H_i S_i |v_ω,i|` over machine speeds: near 1
    /// when all rotors move together, near 0 when they swing against each
    /// other. Only set by [`linearize`].
    pub coherence: Option<f64>,
}

impl Mode {
    pub fn is_oscillatory(&self) -> bool {
        self.freq_hz >= MIN_OSC_HZ
    }

    /// Rotor angle or speed dominated oscillation between machines. Common
    /// frequency (governor) modes are excluded when coherence is known.
    pub fn is_electromechanical(&self) -> bool {
        self.is_oscillatory()
            && (self.dominant_state.ends_with(".delta") || self.dominant_state.ends_with(".d_omega"))
            && self.coherence.is_none_or(|c| c < 0.5)
    }
}

#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    pub a: DMatrix<f64>,
    pub x0: Vec<f64>,
    pub labels: Vec<String>,
    pub eigenvalues: Vec<Complex64>,
    /// Column k is the unit-norm right eigenvector of eigenvalue k.
    pub right: DMatrix<Complex64>,
    /// Column k satisfies `wᵀ A = λ wᵀ`, scaled so that `wᵀ v = 1`.
    pub left: DMatrix<Complex64>,
    /// One entry per real eigenvalue or conjugate pair (positive imaginary
    /// part), sorted by damping ratio with the zero mode last.
    pub modes: Vec<Mode>,
}

fn damping(l: Complex64) -> f64 {
    let m = l.norm();
    if m == 0.0 {
        f64::NAN
    } else {
        -l.re / m
    }
}

/// Eigenvector of `m` for eigenvalue `lambda` by shifted inverse iteration.
fn inverse_iteration(m: &DMatrix<Complex64>, lambda: Complex64, scale: f64) -> DVector<Complex64> {
    let n = m.nrows();
    let shift = lambda + Complex64::new(1e-10 * scale, 1e-10 * scale);
    let mut shifted = m.clone();
    for i in 0..n {
        shifted[(i, i)] -= shift;
    }
    let lu = shifted.lu();
    // Deterministic start with every component excited.
    let mut v = DVector::from_fn(n, |i, _| Complex64::new(1.0 + 0.1 * (i as f64).sin(), 0.3 * (i as f64).cos()));
    for _ in 0..3 {
        match lu.solve(&v) {
            Some(w) if w.iter().all(|c| c.is_finite()) => {
                let norm = w.norm();
                if norm == 0.0 {
                    break;
                }
                v = w.unscale(norm);
            }
            _ => break,
        }
    }
    v.unscale(v.norm())
}

/// Diagonal similarity scaling by powers of two so that row and column norms
/// are comparable. Exact in floating point; improves QR convergence when
/// state units differ by orders of magnitude.
fn balance(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for _ in 0..100 {
        let mut done = true;
        for i in 0..n {
            let (mut c, mut r) = (0.0, 0.0);
            for j in (0..n).filter(|&j| j != i) {
                c += a[(j, i)].abs();
                r += a[(i, j)].abs();
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let (mut f, mut cc, mut rr) = (1.0, c, r);
            while cc < rr / 2.0 {
                cc *= 2.0;
                rr /= 2.0;
                f *= 2.0;
            }
            while cc > rr * 2.0 {
                cc /= 2.0;
                rr *= 2.0;
                f /= 2.0;
            }
            if cc + rr < 0.95 * s {
                done = false;
                a.row_mut(i).unscale_mut(f);
                a.column_mut(i).scale_mut(f);
            }
        }
        if done {
            break;
        }
    }
}

/// Dense eigendecomposition of a real matrix.
pub fn eigenanalysis(a: DMatrix<f64>, labels: Vec<String>, x0: Vec<f64>) -> Result<LinearizedSystem, ModalError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(ModalError::NotSquare { rows: n, cols: a.ncols() });
    }
    let mut balanced = a.clone();
    balance(&mut balanced);
    // Loosen the deflation threshold only if the strict one stalls.
    let schur = [f64::EPSILON, 1e-14, 1e-12]
        .into_iter()
        .find_map(|eps| Schur::try_new(balanced.clone(), eps, 1000 * n.max(10)))
        .ok_or_else(|| ModalError::NoConvergence(format!("Schur iteration on a {n}x{n} matrix")))?;
    let eigenvalues: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
    let ac = a.map(|v| Complex64::new(v, 0.0));
    let act = ac.transpose();
    let scale = a.norm().max(1.0);
    let mut right = DMatrix::zeros(n, n);
    let mut left = DMatrix::zeros(n, n);
    for (k, &l) in eigenvalues.iter().enumerate() {
        let v = inverse_iteration(&ac, l, scale);
        let mut w = inverse_iteration(&act, l, scale);
        let wv: Complex64 = w.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        if wv.norm() > 0.0 {
            w /= wv;
        }
        right.set_column(k, &v);
        left.set_column(k, &w);
    }

    let mut modes: Vec<Mode> = eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, l)| l.im >= 0.0)
        .map(|(k, &l)| {
            let v = right.column(k);
            let w = left.column(k);
            // Participation rather than raw eigenvector magnitude, so that
            // state units do not decide the label.
            let p: Vec<f64> = (0..n).map(|i| (w[i] * v[i]).norm()).collect();
            let total: f64 = p.iter().sum();
            let dom = p
                .iter()
                .enumerate()
                .fold(0, |best, (i, &x)| if x > p[best] { i } else { best });
            Mode {
                index: k,
                eigenvalue: l,
                freq_hz: l.im.abs() / (2.0 * std::f64::consts::PI),
                damping_ratio: damping(l),
                dominant_state: labels.get(dom).cloned().unwrap_or_else(|| format!("x{dom}")),
                dominant_index: dom,
                participation: if total > 0.0 { p[dom] / total } else { 0.0 },
                is_zero: l.norm() < ZERO_MODE_TOL,
                coherence: None,
            }
        })
        .collect();
    modes.sort_by(|a, b| {
        a.is_zero
            .cmp(&b.is_zero)
            .then(a.damping_ratio.total_cmp(&b.damping_ratio))
            .then(a.eigenvalue.re.total_cmp(&b.eigenvalue.re))
    });
    Ok(LinearizedSystem { a, x0, labels, eigenvalues, right, left, modes })
}

/// Linearizes an assembled system at `x0` with central differences.
pub fn linearize(sys: &OdeSystem, x0: &StateVector) -> Result<LinearizedSystem, ModalError> {
    let a = numerical_jacobian(sys, &x0.values, Difference::Central, DEFAULT_EPS)?;
    let mut lin = eigenanalysis(a, sys.allocation().state_labels(), x0.values.clone())?;
    let speeds: Vec<(usize, f64)> = sys
        .machines()
        .iter()
        .map(|m| (m.offset + 1, m.machine.params.h * m.scale))
        .collect();
    if speeds.len() > 1 {
        for m in &mut lin.modes {
            let v = lin.right.column(m.index);
            let num: Complex64 = speeds.iter().map(|&(i, w)| v[i] * w).sum();
            let den: f64 = speeds.iter().map(|&(i, w)| v[i].norm() * w).sum();
            m.coherence = (den > 0.0).then(|| num.norm() / den);
        }
    }
    Ok(lin)
}

/// Dominant damped sinusoid in a sampled signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ringdown {
    pub freq_hz: f64,
    /// Exponential rate, 1/s (negative when decaying).
    pub sigma: f64,
    pub amplitude: f64,
    /// RMS fit residual relative to the RMS of the detrended signal.
    pub rel_residual: f64,
}

/// Least-squares residual of `y ≈ e^{σt}(a cos ωt + b sin ωt) + c0 + c1 t + c2 t²`
/// for fixed `(σ, ω)`, with the linear coefficients eliminated.
fn ringdown_fit(t: &[f64], y: &[f64], sigma: f64, omega: f64) -> (f64, f64) {
    const K: usize = 5;
    let span = t[t.len() - 1] - t[0];
    let mut g = nalgebra::SMatrix::<f64, K, K>::zeros();
    let mut r = nalgebra::SVector::<f64, K>::zeros();
    let mut phi = [0.0; K];
    let basis = |tk: f64, phi: &mut [f64; K]| {
        let s = (tk - t[0]) / span;
        let e = (sigma * (tk - t[0])).exp();
        let (sn, cs) = (omega * tk).sin_cos();
        *phi = [e * cs, e * sn, 1.0, s, s * s];
    };
    let mut yy = 0.0;
    for (&tk, &yk) in t.iter().zip(y) {
        basis(tk, &mut phi);
        for i in 0..K {
            r[i] += phi[i] * yk;
            for j in 0..K {
                g[(i, j)] += phi[i] * phi[j];
            }
        }
        yy += yk * yk;
    }
    match g.cholesky() {
        Some(c) => {
            let coef = c.solve(&r);
            ((yy - coef.dot(&r)).max(0.0), coef[0].hypot(coef[1]))
        }
        None => (f64::INFINITY, 0.0),
    }
}

/// Fits one damped sinusoid plus a quadratic trend to `(t, y)` and returns
/// its frequency and decay rate. The frequency is searched in
/// `[f_lo, f_hi]` Hz; a coarse grid is refined by pattern search.
pub fn ringdown(t: &[f64], y: &[f64], f_lo: f64, f_hi: f64) -> Option<Ringdown> {
    if t.len() < 16 || t.len() != y.len() || !(f_hi > f_lo && f_lo > 0.0) {
        return None;
    }
    // At most ~400 samples keep the search cheap without aliasing below f_hi.
    let stride = (t.len() / 400).max(1);
    let ts: Vec<f64> = t.iter().step_by(stride).copied().collect();
    let ys: Vec<f64> = y.iter().step_by(stride).copied().collect();
    let span = ts[ts.len() - 1] - ts[0];
    if span <= 0.0 || 1.0 / (2.0 * (ts[1] - ts[0])) < f_hi {
        return None;
    }
    let cost = |sig: f64, f: f64| ringdown_fit(&ts, &ys, sig, 2.0 * std::f64::consts::PI * f).0;
    let df = (0.25 / span).min((f_hi - f_lo) / 20.0);
    let ds = 0.1;
    let (mut best_s, mut best_f, mut best) = (0.0, f_lo, f64::INFINITY);
    let mut f = f_lo;
    while f <= f_hi {
        let mut sg = -4.0;
        while sg <= 0.5 {
            let c = cost(sg, f);
            if c < best {
                (best_s, best_f, best) = (sg, f, c);
            }
            sg += ds;
        }
        f += df;
    }
    let (mut hs, mut hf) = (ds, df);
    while hf > 1e-7 * best_f.max(1e-3) {
        let mut moved = false;
        for (a, b) in [(hs, 0.0), (-hs, 0.0), (0.0, hf), (0.0, -hf)] {
            let (s2, f2) = (best_s + a, (best_f + b).clamp(f_lo, f_hi));
            let c = cost(s2, f2);
            if c < best {
                (best_s, best_f, best) = (s2, f2, c);
                moved = true;
            }
        }
        if !moved {
            hs /= 2.0;
            hf /= 2.0;
        }
    }
    let (res, amp) = ringdown_fit(&ts, &ys, best_s, 2.0 * std::f64::consts::PI * best_f);
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let var: f64 = ys.iter().map(|v| (v - mean).powi(2)).sum();
    Some(Ringdown {
        freq_hz: best_f,
        sigma: best_s,
        amplitude: amp,
        rel_residual: if var > 0.0 { (res / var).sqrt() } else { 0.0 },
    })
}

impl LinearizedSystem {
    /// Normalized participation factors `|w_i v_i| / Σ|w v|` of eigenvalue `k`.
    pub fn participation(&self, k: usize) -> Vec<f64> {
        let v = self.right.column(k);
        let w = self.left.column(k);
        let p: Vec<f64> = (0..v.len()).map(|i| (w[i] * v[i]).norm()).collect();
        let total: f64 = p.iter().sum();
        p.into_iter().map(|x| if total > 0.0 { x / total } else { 0.0 }).collect()
    }

    /// Largest `‖A v − λ v‖` over all eigenpairs.
    pub fn max_residual(&self) -> f64 {
        let ac = self.a.map(|v| Complex64::new(v, 0.0));
        (0..self.eigenvalues.len())
            .map(|k| {
                let v = self.right.column(k);
                (&ac * v - v * self.eigenvalues[k]).norm()
            })
            .fold(0.0, f64::max)
    }

    pub fn zero_modes(&self) -> impl Iterator<Item = &Mode> {
        self.modes.iter().filter(|m| m.is_zero)
    }

    /// Least-damped oscillatory mode above `min_freq_hz`, excluding the zero mode.
    pub fn least_damped(&self, min_freq_hz: f64) -> Option<&Mode> {
        self.modes
            .iter()
            .find(|m| !m.is_zero && m.is_oscillatory() && m.freq_hz >= min_freq_hz)
    }
}

/// Mode table as CSV: `re,im,freq_hz,damping_ratio,dominant_state,participation`.
pub fn mode_report_csv(lin: &LinearizedSystem) -> String {
    let mut s = String::from("re,im,freq_hz,damping_ratio,dominant_state,participation\n");
    for m in &lin.modes {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            m.eigenvalue.re, m.eigenvalue.im, m.freq_hz, m.damping_ratio, m.dominant_state, m.participation
        );
    }
    s
}

/// Human-readable mode table.
pub fn mode_report_text(lin: &LinearizedSystem) -> String {
    let mut s = format!(
        "{:>12} {:>12} {:>9} {:>9}  {:<20} {:>6}\n",
        "re", "im", "f [Hz]", "zeta", "dominant", "part."
    );
    for m in &lin.modes {
        let _ = writeln!(
            s,
            "{:>12.5} {:>12.5} {:>9.4} {:>9.4}  {:<20} {:>6.3}{}",
            m.eigenvalue.re,
            m.eigenvalue.im,
            m.freq_hz,
            m.damping_ratio,
            m.dominant_state,
            m.participation,
            if m.is_zero { "  (zero mode)" } else { "" }
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("x{i}")).collect()
    }

    #[test]
    fn rotation_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let lin = eigenanalysis(a, labels(2), vec![0.0; 2]).unwrap();
        assert_eq!(lin.modes.len(), 1);
        let m = &lin.modes[0];
        assert!((m.eigenvalue - Complex64::new(0.0, 1.0)).norm() < 1e-12);
        assert!((m.freq_hz - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-12);
        assert!(m.damping_ratio.abs() < 1e-12);
        assert!(lin.max_residual() < 1e-9);
    }

    #[test]
    fn diagonal_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        let lin = eigenanalysis(a, labels(2), vec![0.0; 2]).unwrap();
        assert_eq!(lin.modes.len(), 2);
        for m in &lin.modes {
            assert_eq!(m.freq_hz, 0.0);
            assert!((m.damping_ratio - 1.0).abs() < 1e-12);
        }
        let mut re: Vec<f64> = lin.modes.iter().map(|m| m.eigenvalue.re).collect();
        re.sort_by(f64::total_cmp);
        assert!((re[0] + 2.0).abs() < 1e-12 && (re[1] + 1.0).abs() < 1e-12);
        assert_eq!(lin.modes.iter().find(|m| (m.eigenvalue.re + 2.0).abs() < 1e-9).unwrap().dominant_state, "x1");
        let csv = mode_report_csv(&lin);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("re,im,freq_hz,damping_ratio,dominant_state,participation\n"));
    }

    #[test]
    fn ringdown_recovers_damped_sinusoid() {
        let t: Vec<f64> = (0..2000).map(|k| 2.0 + k as f64 * 5e-3).collect();
        let y: Vec<f64> = t
            .iter()
            .map(|&t| 0.3 * (-0.4 * (t - 2.0)).exp() * (2.0 * std::f64::consts::PI * 0.7 * t + 0.5).cos() + 0.1 - 0.01 * t)
            .collect();
        let r = ringdown(&t, &y, 0.1, 3.0).unwrap();
        assert!((r.freq_hz - 0.7).abs() < 1e-5, "{r:?}");
        assert!((r.sigma + 0.4).abs() < 1e-4, "{r:?}");
        assert!(r.rel_residual < 1e-4);
    }

    #[test]
    fn left_vectors_are_normalized() {
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 2.0, 0.0, -3.0, -0.5, 1.0, 0.2, 0.0, -4.0]);
        let lin = eigenanalysis(a.clone(), labels(3), vec![0.0; 3]).unwrap();
        let ac = a.map(|v| Complex64::new(v, 0.0));
        for k in 0..3 {
            let w = lin.left.column(k);
            let l = lin.eigenvalues[k];
            let r = ac.transpose() * w - w * l;
            assert!(r.norm() < 1e-8 * w.norm());
            let p: f64 = lin.participation(k).iter().sum();
            assert!((p - 1.0).abs() < 1e-12);
        }
    }
}
