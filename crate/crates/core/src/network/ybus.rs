use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use num_complex::Complex64;

use super::{NetworkError, PowerFlowSolution};
use crate::model_io::{BranchRecord, GeneratorRecord, SystemDescription};

/// One additive change to a matrix entry.
pub type Delta = (usize, usize, Complex64);

/// Relative pivot size below which a factorization is declared singular.
const PIVOT_RTOL: f64 = 1e-13;

/// Sparse complex nodal admittance matrix with a cached dense factorization.
///
/// Entries are held as an immutable base plus an ordered list of pending
/// modifications. A modification that is the exact negation of an earlier
/// one at the same position cancels it, so applying a delta and then its
/// inverse restores the original matrix bit for bit.
///
/// Rows listed as pinned are replaced by identity rows when factorizing: the
/// corresponding entry of the right-hand side is then interpreted as a fixed
/// bus voltage rather than a current injection.
#[derive(Clone, Debug)]
pub struct AdmittanceMatrix {
    bus_names: Vec<String>,
    base: BTreeMap<(usize, usize), Complex64>,
    overlay: Vec<Delta>,
    pinned: Vec<usize>,
    factor: Option<LU<Complex64, Dyn, Dyn>>,
    dirty: bool,
}

impl PartialEq for AdmittanceMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.bus_names == other.bus_names && self.to_dense() == other.to_dense()
    }
}

impl AdmittanceMatrix {
    pub fn new(bus_names: Vec<String>) -> Self {
        Self {
            bus_names,
            base: BTreeMap::new(),
            overlay: Vec::new(),
            pinned: Vec::new(),
            factor: None,
            dirty: true,
        }
    }

    /// Builds a matrix from a dense array, keeping structurally non-zero entries.
    pub fn from_dense(bus_names: Vec<String>, dense: &DMatrix<Complex64>) -> Self {
        let mut y = Self::new(bus_names);
        for j in 0..dense.ncols() {
            for i in 0..dense.nrows() {
                let v = dense[(i, j)];
                if v != Complex64::new(0.0, 0.0) {
                    y.base.insert((i, j), v);
                }
            }
        }
        y
    }

    pub fn dim(&self) -> usize {
        self.bus_names.len()
    }

    pub fn bus_names(&self) -> &[String] {
        &self.bus_names
    }

    pub fn bus_index(&self, name: &str) -> Option<usize> {
        self.bus_names.iter().position(|n| n == name)
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    /// True when modifications are pending on top of the base entries.
    pub fn is_modified(&self) -> bool {
        !self.overlay.is_empty()
    }

    fn check_index(&self, row: usize, col: usize) -> Result<(), NetworkError> {
        let dim = self.dim();
        if row >= dim || col >= dim {
            return Err(NetworkError::IndexOutOfRange { row, col, dim });
        }
        Ok(())
    }

    /// Adds to a base entry. Used while assembling the matrix.
    pub fn stamp(&mut self, row: usize, col: usize, value: Complex64) -> Result<(), NetworkError> {
        self.check_index(row, col)?;
        *self.base.entry((row, col)).or_default() += value;
        self.dirty = true;
        Ok(())
    }

    /// Current value of one entry.
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        let mut v = self.base.get(&(row, col)).copied().unwrap_or_default();
        for &(i, j, d) in &self.overlay {
            if i == row && j == col {
                v += d;
            }
        }
        v
    }

    /// Positions that are structurally present (base or modified).
    pub fn pattern(&self) -> Vec<(usize, usize)> {
        let mut keys: Vec<_> = self.base.keys().copied().collect();
        keys.extend(self.overlay.iter().map(|&(i, j, _)| (i, j)));
        keys.sort_unstable();
        keys.dedup();
        keys
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (&(i, j), &v) in &self.base {
            m[(i, j)] = v;
        }
        for &(i, j, d) in &self.overlay {
            m[(i, j)] += d;
        }
        m
    }

    /// Applies additive modifications and marks the matrix for refactorization.
    pub fn modify(&mut self, deltas: &[Delta]) -> Result<(), NetworkError> {
        for &(i, j, _) in deltas {
            self.check_index(i, j)?;
        }
        for &(i, j, d) in deltas {
            if let Some(pos) = self
                .overlay
                .iter()
                .rposition(|&(oi, oj, od)| oi == i && oj == j && od == -d)
            {
                self.overlay.remove(pos);
            } else {
                self.overlay.push((i, j, d));
            }
        }
        self.dirty = true;
        Ok(())
    }

    pub fn pinned(&self) -> &[usize] {
        &self.pinned
    }

    pub fn set_pinned(&mut self, rows: Vec<usize>) -> Result<(), NetworkError> {
        for &r in &rows {
            self.check_index(r, r)?;
        }
        self.pinned = rows;
        self.dirty = true;
        Ok(())
    }

    /// Factorizes the current entries (with pinned rows replaced).
    pub fn factorize(&mut self) -> Result<(), NetworkError> {
        let mut m = self.to_dense();
        for &r in &self.pinned {
            m.row_mut(r).fill(Complex64::new(0.0, 0.0));
            m[(r, r)] = Complex64::new(1.0, 0.0);
        }
        let lu = m.lu();
        let n = self.dim();
        let u = lu.u();
        let mut max_pivot = 0.0f64;
        let mut min_pivot = f64::INFINITY;
        for k in 0..n {
            let p = u[(k, k)].norm();
            max_pivot = max_pivot.max(p);
            min_pivot = min_pivot.min(p);
        }
        if n > 0 && (max_pivot == 0.0 || min_pivot <= PIVOT_RTOL * max_pivot) {
            self.factor = None;
            self.dirty = true;
            return Err(NetworkError::Singular(format!(
                "pivot ratio {:.3e}",
                if max_pivot == 0.0 { 0.0 } else { min_pivot / max_pivot }
            )));
        }
        self.factor = Some(lu);
        self.dirty = false;
        Ok(())
    }

    /// Solves `Y V = I`, refactorizing first if the matrix changed.
    pub fn solve(&mut self, injections: &[Complex64]) -> Result<Vec<Complex64>, NetworkError> {
        if self.dirty || self.factor.is_none() {
            self.factorize()?;
        }
        self.solve_factored(injections)
    }

    /// Solves with the cached factorization. Fails if the matrix is dirty.
    pub fn solve_factored(&self, injections: &[Complex64]) -> Result<Vec<Complex64>, NetworkError> {
        if injections.len() != self.dim() {
            return Err(NetworkError::DimensionMismatch {
                expected: self.dim(),
                got: injections.len(),
            });
        }
        if self.dim() == 0 {
            return Ok(Vec::new());
        }
        let lu = match (&self.factor, self.dirty) {
            (Some(lu), false) => lu,
            _ => return Err(NetworkError::Singular("matrix not factorized".into())),
        };
        let rhs = DVector::from_column_slice(injections);
        let mut v = lu
            .solve(&rhs)
            .ok_or_else(|| NetworkError::Singular("zero pivot".into()))?;
        for &r in &self.pinned {
            v[r] = injections[r];
        }
        Ok(v.as_slice().to_vec())
    }

    /// Solves into a caller-provided buffer to avoid allocation in the
    /// derivative loop.
    pub fn solve_into(&self, rhs: &mut DVector<Complex64>) -> Result<(), NetworkError> {
        let lu = match (&self.factor, self.dirty) {
            (Some(lu), false) => lu,
            _ => return Err(NetworkError::Singular("matrix not factorized".into())),
        };
        if rhs.len() != self.dim() {
            return Err(NetworkError::DimensionMismatch {
                expected: self.dim(),
                got: rhs.len(),
            });
        }
        if self.dim() == 0 {
            return Ok(());
        }
        let fixed: Vec<(usize, Complex64)> = self.pinned.iter().map(|&r| (r, rhs[r])).collect();
        if lu.solve_mut(rhs) {
            for (r, v) in fixed {
                rhs[r] = v;
            }
            Ok(())
        } else {
            Err(NetworkError::Singular("zero pivot".into()))
        }
    }

    /// `Y * V` using the current entries (pinned rows are not special here).
    pub fn multiply(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.dim()];
        for (&(i, j), &y) in &self.base {
            out[i] += y * v[j];
        }
        for &(i, j, d) in &self.overlay {
            out[i] += d * v[j];
        }
        out
    }
}

/// π-model stamp of one branch: `(row, col, value)` in bus-index terms.
pub fn branch_stamp(
    sys: &SystemDescription,
    branch: &BranchRecord,
) -> Result<[Delta; 4], NetworkError> {
    if branch.r == 0.0 && branch.x == 0.0 {
        return Err(NetworkError::ZeroImpedance(branch.name.clone()));
    }
    let f = sys
        .bus_index(&branch.from)
        .ok_or_else(|| NetworkError::UnknownBus(branch.from.clone()))?;
    let t = sys
        .bus_index(&branch.to)
        .ok_or_else(|| NetworkError::UnknownBus(branch.to.clone()))?;
    let y = series_admittance(branch.r, branch.x);
    let half_shunt = Complex64::new(0.0, branch.b / 2.0);
    let tap = branch.ratio;
    Ok([
        (f, f, (y + half_shunt) / (tap * tap)),
        (t, t, y + half_shunt),
        (f, t, -y / tap),
        (t, f, -y / tap),
    ])
}

/// `1 / (r + jx)`, exact for purely reactive branches.
fn series_admittance(r: f64, x: f64) -> Complex64 {
    if r == 0.0 {
        Complex64::new(0.0, -1.0 / x)
    } else {
        Complex64::new(1.0, 0.0) / Complex64::new(r, x)
    }
}

/// Machine stator impedance `R + jX''` on the system base.
pub fn generator_norton_impedance(sys: &SystemDescription, g: &GeneratorRecord) -> Complex64 {
    let scale = sys.base_mva / g.s_n;
    Complex64::new(g.params.r * scale, g.params.x_d_st * scale)
}

/// Constant admittance drawing `p + jq` at voltage magnitude `v_mag`.
pub fn load_admittance(p: f64, q: f64, v_mag: f64) -> Complex64 {
    Complex64::new(p, q).conj() / (v_mag * v_mag)
}

/// Assembles the bus admittance matrix.
///
/// In-service branches are always stamped. When `loads` carries a power-flow
/// solution, every load is converted to a constant shunt at the solved
/// voltage. With `include_generator_shunts`, each machine contributes
/// `1 / (R + jX'')` on its bus diagonal.
pub fn build_ybus(
    sys: &SystemDescription,
    loads: Option<&PowerFlowSolution>,
    include_generator_shunts: bool,
) -> Result<AdmittanceMatrix, NetworkError> {
    let names: Vec<String> = sys.buses.iter().map(|b| b.name.clone()).collect();
    let mut y = AdmittanceMatrix::new(names);
    for br in sys.branches.iter().filter(|b| b.in_service) {
        for (i, j, v) in branch_stamp(sys, br)? {
            y.stamp(i, j, v)?;
        }
    }
    if let Some(pf) = loads {
        for l in &sys.loads {
            let i = sys
                .bus_index(&l.bus)
                .ok_or_else(|| NetworkError::UnknownBus(l.bus.clone()))?;
            y.stamp(i, i, load_admittance(l.p, l.q, pf.v[i].norm()))?;
        }
    }
    if include_generator_shunts {
        for g in &sys.generators {
            let i = sys
                .bus_index(&g.bus)
                .ok_or_else(|| NetworkError::UnknownBus(g.bus.clone()))?;
            let z = generator_norton_impedance(sys, g);
            y.stamp(i, i, Complex64::new(1.0, 0.0) / z)?;
        }
    }
    if y.dim() > 1 {
        for (i, name) in y.bus_names().iter().enumerate() {
            if (0..y.dim()).all(|j| y.get(i, j) == Complex64::new(0.0, 0.0)) {
                return Err(NetworkError::IsolatedBus(name.clone()));
            }
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_io::parse_model;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    const TWO_BUS: &str = "[base]\nbase_mva f_n\n100 50\n\
        [buses]\nname v_n type\nB1 20 slack\nB2 20 PQ\n\
        [branches]\nname from to r x b\nL1 B1 B2 0 0.1 0\n[generators]\n";

    #[test]
    fn single_branch_stamp() {
        let sys = parse_model(TWO_BUS).unwrap();
        let y = build_ybus(&sys, None, false).unwrap();
        assert_eq!(y.get(0, 0), c(0.0, -10.0));
        assert_eq!(y.get(1, 1), c(0.0, -10.0));
        assert_eq!(y.get(0, 1), c(0.0, 10.0));
        assert_eq!(y.get(1, 0), c(0.0, 10.0));
    }

    #[test]
    fn generator_shunt_single_bus() {
        let sys = parse_model(
            "[base]\nbase_mva\n100\n[buses]\nname v_n type\nB1 20 slack\n[branches]\n\
             [generators]\nname bus S_n P H R X_d X_q X_d_t X_q_t X_d_st X_q_st T_d0_t T_q0_t T_d0_st T_q0_st\n\
             G1 B1 100 0 5 0 1.8 1.7 0.3 0.55 0.2 0.2 8 0.4 0.03 0.05\n",
        )
        .unwrap();
        let y = build_ybus(&sys, None, true).unwrap();
        assert_eq!(y.dim(), 1);
        assert!((y.get(0, 0) - c(0.0, -5.0)).norm() < 1e-15);
    }

    #[test]
    fn tap_and_shunt_stamping() {
        let sys = parse_model(
            "[buses]\nname v_n type\nB1 20 slack\nB2 20 PQ\n\
             [branches]\nname from to r x b ratio\nT1 B1 B2 0 0.1 0.2 1.05\n[generators]\n",
        )
        .unwrap();
        let y = build_ybus(&sys, None, false).unwrap();
        let ys = c(0.0, -10.0);
        assert!((y.get(0, 0) - (ys + c(0.0, 0.1)) / (1.05 * 1.05)).norm() < 1e-14);
        assert!((y.get(1, 1) - (ys + c(0.0, 0.1))).norm() < 1e-14);
        assert!((y.get(0, 1) + ys / 1.05).norm() < 1e-14);
        assert_eq!(y.get(0, 1), y.get(1, 0));
    }

    #[test]
    fn one_by_one_solve_and_zero_rhs() {
        let mut y = AdmittanceMatrix::new(vec!["B1".into()]);
        y.stamp(0, 0, c(0.0, -5.0)).unwrap();
        let v = y.solve(&[c(0.0, -5.0)]).unwrap();
        assert!((v[0] - c(1.0, 0.0)).norm() < 1e-15);
        let v = y.solve(&[c(0.0, 0.0)]).unwrap();
        assert_eq!(v[0], c(0.0, 0.0));
        assert!(matches!(
            y.solve(&[c(0.0, 0.0), c(0.0, 0.0)]),
            Err(NetworkError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn delta_then_inverse_is_bitwise_identity() {
        let sys = parse_model(TWO_BUS).unwrap();
        let mut y = build_ybus(&sys, None, false).unwrap();
        let before = y.to_dense();
        let d = [(0, 1, c(0.1234567, -3.3)), (1, 1, c(1e-3, 7.0))];
        y.modify(&d).unwrap();
        assert!(y.is_dirty());
        assert_ne!(y.to_dense(), before);
        let inv: Vec<Delta> = d.iter().map(|&(i, j, v)| (i, j, -v)).collect();
        y.modify(&inv).unwrap();
        assert_eq!(y.to_dense(), before);
        assert!(!y.is_modified());
    }

    #[test]
    fn line_trip_empties_two_bus_matrix() {
        let sys = parse_model(TWO_BUS).unwrap();
        let mut y = build_ybus(&sys, None, false).unwrap();
        let trip: Vec<Delta> = branch_stamp(&sys, &sys.branches[0])
            .unwrap()
            .iter()
            .map(|&(i, j, v)| (i, j, -v))
            .collect();
        y.modify(&trip).unwrap();
        assert!(y.to_dense().iter().all(|v| *v == c(0.0, 0.0)));
        assert!(matches!(
            y.solve(&[c(1.0, 0.0), c(0.0, 0.0)]),
            Err(NetworkError::Singular(_))
        ));
    }

    #[test]
    fn out_of_range_delta() {
        let mut y = AdmittanceMatrix::new(vec!["a".into()]);
        assert!(matches!(
            y.modify(&[(0, 1, c(1.0, 0.0))]),
            Err(NetworkError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn pinned_row_fixes_voltage() {
        // B1 pinned at 1.0, B2 with a -j10 line and +j5 load-free injection.
        let sys = parse_model(TWO_BUS).unwrap();
        let mut y = build_ybus(&sys, None, false).unwrap();
        y.stamp(1, 1, c(0.0, -10.0)).unwrap();
        y.set_pinned(vec![0]).unwrap();
        let v = y.solve(&[c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert_eq!(v[0], c(1.0, 0.0));
        // -j10 * 1 + (-j20) v2 = 0 -> v2 = -0.5
        assert!((v[1] - c(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn solve_factored_requires_fresh_factor() {
        let mut y = AdmittanceMatrix::new(vec!["a".into()]);
        y.stamp(0, 0, c(1.0, 0.0)).unwrap();
        assert!(y.solve_factored(&[c(1.0, 0.0)]).is_err());
        y.factorize().unwrap();
        assert_eq!(y.solve_factored(&[c(2.0, 0.0)]).unwrap()[0], c(2.0, 0.0));
        y.modify(&[(0, 0, c(1.0, 0.0))]).unwrap();
        assert!(y.solve_factored(&[c(2.0, 0.0)]).is_err());
    }

    #[test]
    fn isolated_bus_detected() {
        let sys = parse_model(
            "[buses]\nname v_n type\nB1 20 slack\nB2 20 PQ\nB3 20 PQ\n\
             [branches]\nname from to r x\nL1 B1 B2 0 0.1\n[generators]\n",
        )
        .unwrap();
        assert_eq!(
            build_ybus(&sys, None, false).unwrap_err(),
            NetworkError::IsolatedBus("B3".into())
        );
    }
}
