use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{Branch, NetworkModel};
use crate::error::{Error, Result};

/// Compressed sparse row matrix of complex entries.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<Complex64>,
}

impl SparseMatrix {
    /// Builds from triplets; duplicate coordinates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, Complex64)]) -> Self {
        let mut rows: Vec<Vec<(usize, Complex64)>> = vec![Vec::new(); nrows];
        for &(i, j, v) in triplets {
            assert!(i < nrows && j < ncols, "triplet ({i}, {j}) out of bounds");
            rows[i].push((j, v));
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            let mut last: Option<usize> = None;
            for (j, v) in row {
                if last == Some(j) {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(j);
                    values.push(v);
                    last = Some(j);
                }
            }
            indptr.push(indices.len());
        }
        SparseMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Stored entries of row `i` as `(column, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.row(i)
            .find(|&(c, _)| c == j)
            .map_or(Complex64::new(0.0, 0.0), |(_, v)| v)
    }

    pub fn row_dot(&self, i: usize, x: &[Complex64]) -> Complex64 {
        self.row(i).map(|(j, v)| v * x[j]).sum()
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows).map(|i| self.row_dot(i, x)).collect()
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    }
}

/// Two-port admittances of a branch π-model with an ideal
/// (possibly phase-shifting) transformer on the from side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BranchPi {
    pub yff: Complex64,
    pub yft: Complex64,
    pub ytf: Complex64,
    pub ytt: Complex64,
}

pub fn branch_pi(branch: &Branch) -> Option<BranchPi> {
    let z = Complex64::new(branch.r, branch.x);
    if z.norm_sqr() == 0.0 {
        return None;
    }
    let ys = z.inv();
    let ytt = ys + Complex64::new(0.0, branch.total_charging_b / 2.0);
    let tap = Complex64::from_polar(branch.tap_ratio, branch.phase_shift);
    Some(BranchPi {
        yff: ytt / (branch.tap_ratio * branch.tap_ratio),
        yft: -ys / tap.conj(),
        ytf: -ys / tap,
        ytt,
    })
}

/// Bus admittance matrix and the branch-end current maps.
///
/// Row `k` of `y_from`/`y_to` belongs to branch `k`; rows of out-of-service
/// branches are empty.
#[derive(Clone, Debug)]
pub struct AdmittanceSet {
    pub y_bus: SparseMatrix,
    pub y_from: SparseMatrix,
    pub y_to: SparseMatrix,
    pub in_service: Vec<bool>,
}

pub fn build_admittance(model: &NetworkModel) -> Result<AdmittanceSet> {
    let nb = model.bus_count();
    let nl = model.branches().len();
    let mut ybus = Vec::with_capacity(4 * nl + nb);
    let mut yf = Vec::with_capacity(2 * nl);
    let mut yt = Vec::with_capacity(2 * nl);
    for (k, br) in model.branches().iter().enumerate() {
        if !br.in_service {
            continue;
        }
        let pi = branch_pi(br).ok_or(Error::SingularBranch { branch: k })?;
        let f = model.bus_index(br.from_bus).expect("validated");
        let t = model.bus_index(br.to_bus).expect("validated");
        ybus.extend([(f, f, pi.yff), (f, t, pi.yft), (t, f, pi.ytf), (t, t, pi.ytt)]);
        yf.extend([(k, f, pi.yff), (k, t, pi.yft)]);
        yt.extend([(k, f, pi.ytf), (k, t, pi.ytt)]);
    }
    for (i, bus) in model.buses().iter().enumerate() {
        let ysh = Complex64::new(bus.shunt_g, bus.shunt_b);
        if ysh != Complex64::new(0.0, 0.0) {
            ybus.push((i, i, ysh));
        }
    }
    Ok(AdmittanceSet {
        y_bus: SparseMatrix::from_triplets(nb, nb, &ybus),
        y_from: SparseMatrix::from_triplets(nl, nb, &yf),
        y_to: SparseMatrix::from_triplets(nl, nb, &yt),
        in_service: model.branches().iter().map(|b| b.in_service).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::testing::{line, network};
    use crate::netmodel::{Bus, BusId, BusKind, Generator};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn lossless_line_admittance() {
        let mut m = network(2, &[(1, 2)]);
        let mut branches = m.branches().to_vec();
        branches[0].r = 0.0;
        m = NetworkModel::new("t", 100.0, m.buses().to_vec(), branches, m.generators().to_vec()).unwrap();
        let y = build_admittance(&m).unwrap().y_bus.to_dense();
        let expect = [[c(0.0, -10.0), c(0.0, 10.0)], [c(0.0, 10.0), c(0.0, -10.0)]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((y[(i, j)] - expect[i][j]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn tap_scales_off_diagonal_and_from_diagonal() {
        let mut plain = line(1, 2, 0.02, 0.2);
        plain.total_charging_b = 0.0;
        let mut tapped = plain.clone();
        tapped.tap_ratio = 1.05;
        let a = branch_pi(&plain).unwrap();
        let b = branch_pi(&tapped).unwrap();
        assert!((b.yft - a.yft / 1.05).norm() < 1e-14);
        assert!((b.ytf - a.ytf / 1.05).norm() < 1e-14);
        assert!((b.yff - a.yff / (1.05 * 1.05)).norm() < 1e-14);
        assert_eq!(b.ytt, a.ytt);
    }

    #[test]
    fn symmetric_without_taps() {
        let m = network(4, &[(1, 2), (2, 3), (3, 4), (1, 4), (2, 4)]);
        let y = build_admittance(&m).unwrap().y_bus.to_dense();
        assert!((&y - y.transpose()).norm() < 1e-14);
    }

    #[test]
    fn out_of_service_branches_leave_only_shunts() {
        let buses = vec![
            Bus {
                shunt_b: 0.2,
                ..crate::netmodel::testing::bus(1, BusKind::Slack, 0.0, 138.0)
            },
            crate::netmodel::testing::bus(2, BusKind::Pq, 5.0, 138.0),
        ];
        let mut br = line(1, 2, 0.01, 0.1);
        br.in_service = false;
        let gens = vec![Generator {
            bus: BusId(1),
            p_mw: 0.0,
            q_mvar: 0.0,
            v_setpoint: 1.0,
            in_service: true,
        }];
        let m = NetworkModel::new("t", 100.0, buses, vec![br], gens).unwrap();
        let adm = build_admittance(&m).unwrap();
        let y = adm.y_bus.to_dense();
        assert_eq!(y[(0, 0)], c(0.0, 0.2));
        assert_eq!(y[(0, 1)], c(0.0, 0.0));
        assert_eq!(y[(1, 1)], c(0.0, 0.0));
        assert_eq!(adm.y_from.row(0).count(), 0);
    }

    #[test]
    fn zero_impedance_is_rejected() {
        let m = network(2, &[(1, 2)]);
        let mut branches = m.branches().to_vec();
        branches[0].r = 0.0;
        branches[0].x = 0.0;
        let m = NetworkModel::new("t", 100.0, m.buses().to_vec(), branches, m.generators().to_vec()).unwrap();
        assert!(matches!(build_admittance(&m), Err(Error::SingularBranch { branch: 0 })));
    }

    #[test]
    fn from_rows_touch_only_branch_ends() {
        let m = network(4, &[(1, 2), (2, 3), (3, 4)]);
        let adm = build_admittance(&m).unwrap();
        let cols: Vec<usize> = adm.y_from.row(1).map(|(j, _)| j).collect();
        assert_eq!(cols, vec![1, 2]);
    }

    #[test]
    fn duplicate_triplets_accumulate() {
        let s = SparseMatrix::from_triplets(1, 2, &[(0, 1, c(1.0, 0.0)), (0, 1, c(0.0, 2.0))]);
        assert_eq!(s.nnz(), 1);
        assert_eq!(s.get(0, 1), c(1.0, 2.0));
    }
}
