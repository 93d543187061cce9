use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{AdmittanceMatrix, NetworkError};

/// Bookkeeping for a Kron-reduced network.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionMap {
    /// Retained bus names, in original index order.
    pub retained: Vec<String>,
    /// Eliminated bus names, in original index order.
    pub eliminated: Vec<String>,
    /// Original indices of the retained buses.
    pub retained_index: Vec<usize>,
    /// Original indices of the eliminated buses.
    pub eliminated_index: Vec<usize>,
    /// `-Y_ee⁻¹ Y_ek`: maps retained-bus voltages to eliminated-bus voltages
    /// for passive eliminated buses.
    pub recovery: DMatrix<Complex64>,
}

impl ReductionMap {
    /// Voltages at the eliminated buses given retained-bus voltages.
    pub fn recover(&self, v_retained: &[Complex64]) -> Vec<Complex64> {
        let ne = self.eliminated.len();
        let nk = self.retained.len();
        let mut out = vec![Complex64::new(0.0, 0.0); ne];
        for (e, o) in out.iter_mut().enumerate() {
            for k in 0..nk {
                *o += self.recovery[(e, k)] * v_retained[k];
            }
        }
        out
    }

    /// Scatters retained and recovered voltages back into original bus order.
    pub fn full_voltages(&self, v_retained: &[Complex64]) -> Vec<Complex64> {
        let n = self.retained.len() + self.eliminated.len();
        let mut v = vec![Complex64::new(0.0, 0.0); n];
        for (k, &i) in self.retained_index.iter().enumerate() {
            v[i] = v_retained[k];
        }
        for (e, val) in self.recover(v_retained).into_iter().enumerate() {
            v[self.eliminated_index[e]] = val;
        }
        v
    }

    /// Position of an original bus index in the retained ordering.
    pub fn retained_position(&self, original: usize) -> Option<usize> {
        self.retained_index.iter().position(|&i| i == original)
    }
}

/// Eliminates every bus not in `keep` via the Schur complement
/// `Y_kk - Y_ke Y_ee⁻¹ Y_ek`.
pub fn kron_reduce(
    y: &AdmittanceMatrix,
    keep: &[usize],
) -> Result<(AdmittanceMatrix, ReductionMap), NetworkError> {
    let n = y.dim();
    let mut is_kept = vec![false; n];
    for &k in keep {
        if k >= n {
            return Err(NetworkError::IndexOutOfRange {
                row: k,
                col: k,
                dim: n,
            });
        }
        is_kept[k] = true;
    }
    let kept: Vec<usize> = (0..n).filter(|&i| is_kept[i]).collect();
    let elim: Vec<usize> = (0..n).filter(|&i| !is_kept[i]).collect();
    let names = y.bus_names();
    let dense = y.to_dense();
    let nk = kept.len();
    let ne = elim.len();

    let block = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |r, c| dense[(rows[r], cols[c])])
    };
    let ykk = block(&kept, &kept);
    let (reduced, recovery) = if ne == 0 {
        (ykk, DMatrix::zeros(0, nk))
    } else {
        check_reachability(&dense, &is_kept, &elim, names)?;
        let yee = block(&elim, &elim);
        let yek = block(&elim, &kept);
        let yke = block(&kept, &elim);
        let lu = yee.lu();
        let x = lu.solve(&yek).ok_or_else(|| {
            NetworkError::Singular(format!(
                "eliminated block containing bus '{}'",
                names[elim[0]]
            ))
        })?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(NetworkError::Singular("eliminated block".into()));
        }
        (ykk - yke * &x, -x)
    };

    let kept_names: Vec<String> = kept.iter().map(|&i| names[i].clone()).collect();
    let elim_names: Vec<String> = elim.iter().map(|&i| names[i].clone()).collect();
    let mut out = AdmittanceMatrix::from_dense(kept_names.clone(), &reduced);
    out.factorize().ok();
    Ok((
        out,
        ReductionMap {
            retained: kept_names,
            eliminated: elim_names,
            retained_index: kept,
            eliminated_index: elim,
            recovery,
        },
    ))
}

/// Kron reduction with the keep set given by bus name.
pub fn kron_reduce_by_name(
    y: &AdmittanceMatrix,
    keep: &[&str],
) -> Result<(AdmittanceMatrix, ReductionMap), NetworkError> {
    let idx = keep
        .iter()
        .map(|name| {
            y.bus_index(name)
                .ok_or_else(|| NetworkError::UnknownBus((*name).to_owned()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    kron_reduce(y, &idx)
}

/// Every eliminated bus must couple, possibly through other eliminated
/// buses, to a retained bus or carry its own shunt; otherwise `Y_ee` is
/// singular.
fn check_reachability(
    dense: &DMatrix<Complex64>,
    is_kept: &[bool],
    elim: &[usize],
    names: &[String],
) -> Result<(), NetworkError> {
    let n = dense.nrows();
    let zero = Complex64::new(0.0, 0.0);
    let mut anchored = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    // Removing stamps leaves round-off on the diagonal; that is not a shunt.
    let floor = 1e-10 * dense.iter().map(|v| v.norm()).fold(0.0, f64::max);
    for &e in elim {
        let row_sum: Complex64 = (0..n).map(|j| dense[(e, j)]).sum();
        let touches_kept = (0..n).any(|j| is_kept[j] && dense[(e, j)] != zero);
        if touches_kept || row_sum.norm() > floor {
            anchored[e] = true;
            stack.push(e);
        }
    }
    while let Some(i) = stack.pop() {
        for &j in elim {
            if !anchored[j] && dense[(i, j)] != zero {
                anchored[j] = true;
                stack.push(j);
            }
        }
    }
    if let Some(&e) = elim.iter().find(|&&e| !anchored[e]) {
        return Err(NetworkError::DisconnectedEliminated(names[e].clone()));
    }
    Ok(())
}
