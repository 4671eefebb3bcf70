//! PMU-only linear state estimation and the noise study built on it.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::rmse;
use crate::measurement::{apply_gmm_noise, Channel, GmmNoiseModel, PmuPlacement};
use crate::netmodel::{AdmittanceSet, BranchEnd, Grid, NetworkModel};
use crate::par::{self, Execution};
use crate::powerflow::{BusState, FlowInjection};

/// Complex map `h` from bus voltages to the placement's channel phasors,
/// with its QR factors cached when the system is observable.
#[derive(Clone, Debug)]
pub struct LinearMeasurementModel {
    pub h: DMatrix<Complex64>,
    pub placement: PmuPlacement,
    slack: usize,
    rank: usize,
    factors: Option<(DMatrix<Complex64>, DMatrix<Complex64>)>,
}

pub fn build_measurement_model(
    model: &NetworkModel,
    admittance: &AdmittanceSet,
    placement: &PmuPlacement,
) -> Result<LinearMeasurementModel> {
    let nb = model.bus_count();
    let channels = placement.channels();
    let mut h = DMatrix::zeros(channels.len(), nb);
    for (r, ch) in channels.iter().enumerate() {
        match *ch {
            Channel::Voltage { bus } => {
                h[(r, model.bus_index(bus).expect("placement validated"))] = Complex64::new(1.0, 0.0);
            }
            Channel::Current { branch, end, .. } => {
                if !admittance.in_service.get(branch).copied().unwrap_or(false) {
                    return Err(Error::OutOfServiceChannel { channel: r, branch });
                }
                let map = match end {
                    BranchEnd::From => &admittance.y_from,
                    BranchEnd::To => &admittance.y_to,
                };
                for (c, y) in map.row(branch) {
                    h[(r, c)] = y;
                }
            }
        }
    }
    let rank = numerical_rank(&h);
    let factors = (rank == nb).then(|| {
        let qr = h.clone().qr();
        (qr.q().adjoint(), qr.r())
    });
    Ok(LinearMeasurementModel {
        h,
        placement: placement.clone(),
        slack: model.slack_index(),
        rank,
        factors,
    })
}

fn numerical_rank(h: &DMatrix<Complex64>) -> usize {
    if h.nrows() == 0 || h.ncols() == 0 {
        return 0;
    }
    let sv = h.clone().singular_values();
    let max = sv.max();
    let tol = h.ncols() as f64 * f64::EPSILON * max;
    sv.iter().filter(|&&s| s > tol).count()
}

impl LinearMeasurementModel {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn bus_count(&self) -> usize {
        self.h.ncols()
    }

    pub fn channel_count(&self) -> usize {
        self.h.nrows()
    }

    /// Noiseless channel phasors for a state.
    pub fn measure(&self, state: &BusState) -> Vec<Complex64> {
        let x = DVector::from_vec(state.voltages());
        (&self.h * x).iter().copied().collect()
    }

    /// Least-squares complex voltages minimizing `‖z − h·x‖₂`, not rebased.
    pub fn solve(&self, z: &[Complex64]) -> Result<Vec<Complex64>> {
        let (qh, r) = self.factors.as_ref().ok_or(Error::Unobservable)?;
        if z.len() != self.channel_count() {
            return Err(Error::Dimension {
                expected: self.channel_count(),
                actual: z.len(),
            });
        }
        let rhs = qh * DVector::from_column_slice(z);
        let x = r.solve_upper_triangular(&rhs).ok_or(Error::Unobservable)?;
        Ok(x.iter().copied().collect())
    }
}

pub fn check_observability(lmm: &LinearMeasurementModel) -> bool {
    lmm.rank == lmm.bus_count()
}

/// Polar state estimate with the slack angle at zero.
pub fn estimate_states(lmm: &LinearMeasurementModel, z: &[Complex64]) -> Result<BusState> {
    let v = lmm.solve(z)?;
    Ok(BusState::from_voltages(&v, lmm.slack))
}

pub fn lse_flow_injection(
    lmm: &LinearMeasurementModel,
    model: &NetworkModel,
    z: &[Complex64],
) -> Result<FlowInjection> {
    FlowInjection::evaluate(&estimate_states(lmm, z)?, model)
}

/// Mean-over-variables RMSE of the LSE for one noise setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LseErrors {
    pub noise: String,
    pub v_mag_pu: f64,
    pub v_ang_deg: f64,
    pub flow_mw: f64,
    pub injection_mw: f64,
}

/// Runs the estimator over `states` for every `(label, noise)` pair.
/// Sample `i` draws its noise with key `sample_keys[i]`.
pub fn lse_noise_study(
    grid: &Grid,
    placement: &PmuPlacement,
    states: &[BusState],
    sample_keys: &[u64],
    noises: &[(String, GmmNoiseModel)],
    exec: Execution,
) -> Result<Vec<LseErrors>> {
    if states.is_empty() || states.len() != sample_keys.len() {
        return Err(Error::InvalidParameter(format!(
            "noise study needs one key per state ({} states, {} keys)",
            states.len(),
            sample_keys.len()
        )));
    }
    let lmm = build_measurement_model(&grid.model, &grid.admittance, placement)?;
    if !check_observability(&lmm) {
        return Err(Error::Unobservable);
    }
    let keys = placement.channel_keys();
    let nb = grid.bus_count();
    let mb = grid.flow_count();
    let truth: Vec<FlowInjection> =
        par::try_map_indexed(exec, states.len(), |i| FlowInjection::evaluate(&states[i], &grid.model))?;
    let mut out = Vec::with_capacity(noises.len());
    for (label, noise) in noises {
        let est = par::try_map_indexed(exec, states.len(), |i| {
            let z = apply_gmm_noise(&lmm.measure(&states[i]), &keys, sample_keys[i], noise);
            let st = estimate_states(&lmm, &z)?;
            let fi = FlowInjection::evaluate(&st, &grid.model)?;
            Ok::<_, Error>((st, fi))
        })?;
        let n = states.len();
        let block = |width: usize, f: &dyn Fn(usize, bool) -> Vec<f64>| -> Result<f64> {
            let mut p = Array2::zeros((n, width));
            let mut t = Array2::zeros((n, width));
            for i in 0..n {
                p.row_mut(i).assign(&ndarray::Array1::from(f(i, true)));
                t.row_mut(i).assign(&ndarray::Array1::from(f(i, false)));
            }
            Ok(rmse(p.view(), t.view())?.mean)
        };
        let v_mag_pu = block(nb, &|i, e| {
            if e {
                est[i].0.v_mag.clone()
            } else {
                states[i].v_mag.clone()
            }
        })?;
        let v_ang_deg = block(nb, &|i, e| {
            let s = if e { &est[i].0 } else { &states[i] };
            s.v_ang.iter().map(|a| a.to_degrees()).collect()
        })?;
        let flow_mw = block(mb, &|i, e| {
            if e {
                est[i].1.flows.clone()
            } else {
                truth[i].flows.clone()
            }
        })?;
        let injection_mw = block(nb, &|i, e| {
            if e {
                est[i].1.injections.clone()
            } else {
                truth[i].injections.clone()
            }
        })?;
        out.push(LseErrors {
            noise: label.clone(),
            v_mag_pu,
            v_ang_deg,
            flow_mw,
            injection_mw,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::true_phasors;
    use crate::netmodel::testing::network;
    use crate::netmodel::BusId;
    use crate::powerflow::solve_powerflow;

    fn ring() -> Grid {
        Grid::new(network(5, &[(1, 2), (2, 3), (3, 4), (4, 5), (5, 1), (2, 4)])).unwrap()
    }

    fn placement(g: &Grid, buses: &[u32]) -> PmuPlacement {
        let ids: Vec<BusId> = buses.iter().map(|&b| BusId(b)).collect();
        PmuPlacement::new(&g.model, &ids).unwrap()
    }

    #[test]
    fn voltage_rows_are_unit_and_current_rows_match_phasors() {
        let g = ring();
        let p = placement(&g, &[3, 1]);
        let lmm = build_measurement_model(&g.model, &g.admittance, &p).unwrap();
        assert_eq!(lmm.h[(0, 2)], Complex64::new(1.0, 0.0));
        assert_eq!(lmm.h.row(0).iter().filter(|c| c.norm() != 0.0).count(), 1);
        let st = solve_powerflow(&g.model, 1e-10, 20).unwrap();
        let tp = true_phasors(&st, &g.admittance, &g.model, &p).unwrap();
        for (a, b) in lmm.measure(&st).iter().zip(&tp) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn observability_cases() {
        let g = ring();
        let all = placement(&g, &[1, 2, 3, 4, 5]);
        assert!(check_observability(
            &build_measurement_model(&g.model, &g.admittance, &all).unwrap()
        ));
        let none = placement(&g, &[]);
        assert!(!check_observability(
            &build_measurement_model(&g.model, &g.admittance, &none).unwrap()
        ));
        let one = placement(&g, &[1]);
        let lmm = build_measurement_model(&g.model, &g.admittance, &one).unwrap();
        assert!(!check_observability(&lmm));
        assert!(matches!(
            estimate_states(&lmm, &vec![Complex64::new(1.0, 0.0); lmm.channel_count()]),
            Err(Error::Unobservable)
        ));
        let dom = placement(&g, &[2, 5]);
        assert!(check_observability(
            &build_measurement_model(&g.model, &g.admittance, &dom).unwrap()
        ));
    }

    #[test]
    fn consistent_measurements_are_recovered() {
        let g = ring();
        let p = placement(&g, &[2, 5]);
        let lmm = build_measurement_model(&g.model, &g.admittance, &p).unwrap();
        let st = solve_powerflow(&g.model, 1e-10, 20).unwrap();
        let est = estimate_states(&lmm, &lmm.measure(&st)).unwrap();
        for i in 0..5 {
            assert!((est.v_mag[i] - st.v_mag[i]).abs() < 1e-10);
            assert!((est.v_ang[i] - st.v_ang[i]).abs() < 1e-10);
        }
        let fi = lse_flow_injection(&lmm, &g.model, &lmm.measure(&st)).unwrap();
        let tf = FlowInjection::evaluate(&st, &g.model).unwrap();
        for (a, b) in fi.flows.iter().zip(&tf.flows) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn residual_is_orthogonal_to_columns() {
        let g = ring();
        let p = placement(&g, &[2, 5, 3]);
        let lmm = build_measurement_model(&g.model, &g.admittance, &p).unwrap();
        let st = solve_powerflow(&g.model, 1e-10, 20).unwrap();
        let noise = GmmNoiseModel::field_mixture(4);
        let z = apply_gmm_noise(&lmm.measure(&st), &p.channel_keys(), 0, &noise);
        let x = DVector::from_vec(lmm.solve(&z).unwrap());
        let resid = DVector::from_vec(z) - &lmm.h * x;
        let g_ = lmm.h.adjoint() * resid;
        assert!(g_.iter().all(|c| c.norm() < 1e-8));
    }

    #[test]
    fn error_is_locally_linear_in_perturbation() {
        let g = ring();
        let p = placement(&g, &[2, 5]);
        let lmm = build_measurement_model(&g.model, &g.admittance, &p).unwrap();
        let st = solve_powerflow(&g.model, 1e-10, 20).unwrap();
        let z0 = lmm.measure(&st);
        let dir: Vec<Complex64> = (0..z0.len())
            .map(|i| Complex64::new((i as f64).sin(), (i as f64).cos()))
            .collect();
        let err = |eps: f64| {
            let z: Vec<_> = z0.iter().zip(&dir).map(|(a, d)| a + d * eps).collect();
            let v = lmm.solve(&z).unwrap();
            v.iter()
                .zip(st.voltages())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt()
        };
        let (e1, e2) = (err(1e-6), err(2e-6));
        assert!(e1 > 0.0);
        assert!((e2 / e1 - 2.0).abs() < 1e-4);
    }

    #[test]
    fn study_rows() {
        let g = ring();
        let p = placement(&g, &[2, 5]);
        let st = solve_powerflow(&g.model, 1e-10, 20).unwrap();
        let states = vec![st; 20];
        let keys: Vec<u64> = (0..20).collect();
        let noises = vec![
            ("none".to_string(), GmmNoiseModel::none(1)),
            ("gmm".to_string(), GmmNoiseModel::field_mixture(1)),
        ];
        let r = lse_noise_study(&g, &p, &states, &keys, &noises, Execution::Parallel).unwrap();
        assert!(r[0].flow_mw < 1e-9 && r[0].v_mag_pu < 1e-12);
        assert!(r[1].flow_mw > 1e-3);
        let again = lse_noise_study(&g, &p, &states, &keys, &noises, Execution::Sequential).unwrap();
        assert_eq!(r, again);
    }
}
