//! Polar Newton–Raphson AC power flow and branch-flow / injection evaluation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{branch_pi, build_admittance, AdmittanceSet, BusKind, NetworkModel};

/// Complex bus voltages in polar form (per-unit, radians), bus order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BusState {
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
}

impl BusState {
    /// 1.0 pu / 0 rad everywhere except regulated magnitudes at PV and slack buses.
    pub fn flat(model: &NetworkModel) -> BusState {
        let v_mag = model
            .buses()
            .iter()
            .map(|b| if b.kind == BusKind::Pq { 1.0 } else { b.v_setpoint })
            .collect();
        BusState {
            v_mag,
            v_ang: vec![0.0; model.bus_count()],
        }
    }

    pub fn len(&self) -> usize {
        self.v_mag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_mag.is_empty()
    }

    pub fn voltages(&self) -> Vec<Complex64> {
        self.v_mag
            .iter()
            .zip(&self.v_ang)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect()
    }

    /// Polar form of `v` with angles shifted so bus `slack` sits at 0.
    pub fn from_voltages(v: &[Complex64], slack: usize) -> BusState {
        let reference = v[slack].arg();
        BusState {
            v_mag: v.iter().map(|x| x.norm()).collect(),
            v_ang: v.iter().map(|x| wrap_angle(x.arg() - reference)).collect(),
        }
    }

    fn check(&self, model: &NetworkModel) -> Result<()> {
        let n = model.bus_count();
        if self.v_mag.len() != n || self.v_ang.len() != n {
            return Err(Error::Dimension {
                expected: n,
                actual: self.v_mag.len().min(self.v_ang.len()),
            });
        }
        Ok(())
    }
}

fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Net scheduled injections (generation minus load) in per-unit.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduledPower {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl ScheduledPower {
    /// Case-file loads and generator outputs.
    pub fn base(model: &NetworkModel) -> ScheduledPower {
        let ones = vec![1.0; model.bus_count()];
        Self::build(model, &ones, 1.0)
    }

    /// Loads scaled bus by bus (`multipliers` has one entry per bus);
    /// every in-service generator is scaled by the total-load ratio and the
    /// slack bus picks up the loss residual.
    pub fn scaled(model: &NetworkModel, multipliers: &[f64]) -> ScheduledPower {
        assert_eq!(multipliers.len(), model.bus_count());
        let base: f64 = model.buses().iter().map(|b| b.load_p).sum();
        let scaled: f64 = model.buses().iter().zip(multipliers).map(|(b, m)| b.load_p * m).sum();
        let ratio = if base != 0.0 { scaled / base } else { 1.0 };
        Self::build(model, multipliers, ratio)
    }

    fn build(model: &NetworkModel, load_mult: &[f64], gen_mult: f64) -> ScheduledPower {
        let base = model.base_power();
        let mut p: Vec<f64> = model
            .buses()
            .iter()
            .zip(load_mult)
            .map(|(b, m)| -b.load_p * m / base)
            .collect();
        let mut q: Vec<f64> = model
            .buses()
            .iter()
            .zip(load_mult)
            .map(|(b, m)| -b.load_q * m / base)
            .collect();
        for g in model.generators().iter().filter(|g| g.in_service) {
            let i = model.bus_index(g.bus).expect("validated");
            p[i] += g.p_mw * gen_mult / base;
            q[i] += g.q_mvar / base;
        }
        ScheduledPower { p, q }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Max absolute mismatch in per-unit.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_iter: 20,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PowerFlowSolution {
    pub state: BusState,
    pub iterations: usize,
    pub max_mismatch: f64,
}

/// Complex power injections `V ∘ conj(Ybus V)` in per-unit.
pub fn complex_injections(adm: &AdmittanceSet, v: &[Complex64]) -> Vec<Complex64> {
    let i = adm.y_bus.mul_vec(v);
    v.iter().zip(&i).map(|(v, i)| v * i.conj()).collect()
}

/// Residuals of the power-flow equations that the solver drives to zero:
/// active power at PV and PQ buses, then reactive power at PQ buses.
pub fn mismatch(model: &NetworkModel, adm: &AdmittanceSet, state: &BusState, sched: &ScheduledPower) -> Vec<f64> {
    let s = complex_injections(adm, &state.voltages());
    let mut out = Vec::new();
    for (i, b) in model.buses().iter().enumerate() {
        if b.kind != BusKind::Slack {
            out.push(s[i].re - sched.p[i]);
        }
    }
    for (i, b) in model.buses().iter().enumerate() {
        if b.kind == BusKind::Pq {
            out.push(s[i].im - sched.q[i]);
        }
    }
    out
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter()
        .fold(0.0, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

/// Solves the case as given in the file (base loads and dispatch).
pub fn solve_powerflow(model: &NetworkModel, tol: f64, max_iter: usize) -> Result<BusState> {
    let adm = build_admittance(model)?;
    let opts = SolverOptions { tol, max_iter };
    solve(model, &adm, &ScheduledPower::base(model), opts).map(|s| s.state)
}

/// Newton–Raphson in polar coordinates with a full Jacobian, started flat.
/// Reactive limits of PV buses are not enforced.
pub fn solve(
    model: &NetworkModel,
    adm: &AdmittanceSet,
    sched: &ScheduledPower,
    opts: SolverOptions,
) -> Result<PowerFlowSolution> {
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::InvalidParameter(
            "power flow needs tol > 0 and max_iter >= 1".into(),
        ));
    }
    let n = model.bus_count();
    let kinds: Vec<BusKind> = model.buses().iter().map(|b| b.kind).collect();
    let mut ang_pos = vec![None; n];
    let mut mag_pos = vec![None; n];
    let mut nang = 0;
    for i in 0..n {
        if kinds[i] != BusKind::Slack {
            ang_pos[i] = Some(nang);
            nang += 1;
        }
    }
    let mut nmag = 0;
    for i in 0..n {
        if kinds[i] == BusKind::Pq {
            mag_pos[i] = Some(nang + nmag);
            nmag += 1;
        }
    }
    let dim = nang + nmag;

    let mut state = BusState::flat(model);
    let mut f = mismatch(model, adm, &state, sched);
    let mut norm = max_abs(&f);
    let mut iterations = 0;
    while !(norm < opts.tol) {
        if iterations == opts.max_iter || !norm.is_finite() {
            return Err(Error::NotConverged {
                iterations,
                mismatch: norm,
            });
        }
        iterations += 1;
        let v = state.voltages();
        let current = adm.y_bus.mul_vec(&v);
        let mut jac = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..n {
            let (rp, rq) = (ang_pos[i], mag_pos[i]);
            if rp.is_none() {
                continue;
            }
            let vn_i = v[i] / state.v_mag[i];
            let mut diag_a = Complex64::new(0.0, 0.0);
            let mut diag_m = Complex64::new(0.0, 0.0);
            for (k, y) in adm.y_bus.row(i) {
                let vn_k = v[k] / state.v_mag[k];
                // dS_i/dVa_k and dS_i/dVm_k from the off-diagonal (Ybus) part
                let d_a = Complex64::i() * v[i] * (-(y * v[k])).conj();
                let d_m = v[i] * (y * vn_k).conj();
                if k == i {
                    diag_a += d_a;
                    diag_m += d_m;
                } else {
                    put(&mut jac, rp, rq, ang_pos[k], mag_pos[k], d_a, d_m);
                }
            }
            diag_a += Complex64::i() * v[i] * current[i].conj();
            diag_m += current[i].conj() * vn_i;
            put(&mut jac, rp, rq, ang_pos[i], mag_pos[i], diag_a, diag_m);
        }
        let rhs = DVector::from_iterator(dim, f.iter().map(|x| -x));
        let dx = jac
            .lu()
            .solve(&rhs)
            .ok_or(Error::SingularJacobian { iteration: iterations })?;
        for i in 0..n {
            if let Some(p) = ang_pos[i] {
                state.v_ang[i] += dx[p];
            }
            if let Some(p) = mag_pos[i] {
                state.v_mag[i] += dx[p];
            }
        }
        f = mismatch(model, adm, &state, sched);
        norm = max_abs(&f);
    }
    if state.v_mag.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::NotConverged {
            iterations,
            mismatch: norm,
        });
    }
    Ok(PowerFlowSolution {
        state,
        iterations,
        max_mismatch: norm,
    })
}

fn put(
    jac: &mut DMatrix<f64>,
    rp: Option<usize>,
    rq: Option<usize>,
    ca: Option<usize>,
    cm: Option<usize>,
    d_a: Complex64,
    d_m: Complex64,
) {
    for (row, part) in [(rp, 0usize), (rq, 1)] {
        let Some(r) = row else { continue };
        let pick = |z: Complex64| if part == 0 { z.re } else { z.im };
        if let Some(c) = ca {
            jac[(r, c)] = pick(d_a);
        }
        if let Some(c) = cm {
            jac[(r, c)] = pick(d_m);
        }
    }
}

/// Active power entering each branch end, MW, in conversion flow order
/// (from-end then to-end of every in-service branch).
pub fn branch_flows(state: &BusState, model: &NetworkModel) -> Result<Vec<f64>> {
    state.check(model)?;
    let v = state.voltages();
    let base = model.base_power();
    let mut out = Vec::with_capacity(2 * model.branches().len());
    for (k, br) in model.in_service_branches() {
        let pi = branch_pi(br).ok_or(Error::SingularBranch { branch: k })?;
        let f = model.bus_index(br.from_bus).expect("validated");
        let t = model.bus_index(br.to_bus).expect("validated");
        let i_f = pi.yff * v[f] + pi.yft * v[t];
        let i_t = pi.ytf * v[f] + pi.ytt * v[t];
        out.push((v[f] * i_f.conj()).re * base);
        out.push((v[t] * i_t.conj()).re * base);
    }
    Ok(out)
}

/// Net active injection at each bus (MW) as the sum of incident branch-end flows.
pub fn bus_injections(state: &BusState, model: &NetworkModel) -> Result<Vec<f64>> {
    model.require_lossless_shunts()?;
    let flows = branch_flows(state, model)?;
    let mut inj = vec![0.0; model.bus_count()];
    let ends = model.in_service_branches().flat_map(|(_, br)| [br.from_bus, br.to_bus]);
    for (bus, f) in ends.zip(flows) {
        inj[model.bus_index(bus).expect("validated")] += f;
    }
    Ok(inj)
}

/// Active injections from the nodal double sum `Re(V_i conj(Σ_k Y_ik V_k))`, per-unit.
pub fn nodal_injections(state: &BusState, adm: &AdmittanceSet) -> Vec<f64> {
    complex_injections(adm, &state.voltages())
        .iter()
        .map(|s| s.re)
        .collect()
}

/// Flows and injections (MW) evaluated from one state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowInjection {
    pub flows: Vec<f64>,
    pub injections: Vec<f64>,
}

impl FlowInjection {
    pub fn evaluate(state: &BusState, model: &NetworkModel) -> Result<FlowInjection> {
        Ok(FlowInjection {
            flows: branch_flows(state, model)?,
            injections: bus_injections(state, model)?,
        })
    }

    /// `[flows; injections]`.
    pub fn stacked(&self) -> Vec<f64> {
        let mut v = self.flows.clone();
        v.extend_from_slice(&self.injections);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::testing::{bus, line, network};
    use crate::netmodel::{build_conversion, BusId, Generator};

    fn lossless_pair() -> NetworkModel {
        let buses = vec![bus(1, BusKind::Slack, 0.0, 138.0), bus(2, BusKind::Pq, 0.0, 138.0)];
        let gens = vec![Generator {
            bus: BusId(1),
            p_mw: 0.0,
            q_mvar: 0.0,
            v_setpoint: 1.0,
            in_service: true,
        }];
        NetworkModel::new("pair", 100.0, buses, vec![line(1, 2, 0.0, 0.1)], gens).unwrap()
    }

    #[test]
    fn zero_injection_network_is_flat() {
        let mut m = network(4, &[(1, 2), (2, 3), (3, 4)]);
        let buses = m
            .buses()
            .iter()
            .map(|b| crate::netmodel::Bus {
                load_p: 0.0,
                load_q: 0.0,
                ..b.clone()
            })
            .collect();
        m = NetworkModel::new("z", 100.0, buses, m.branches().to_vec(), m.generators().to_vec()).unwrap();
        let s = solve_powerflow(&m, 1e-8, 20).unwrap();
        assert!(s.v_ang.iter().all(|&a| a == 0.0));
        assert!(s.v_mag.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn flat_voltages_carry_no_flow() {
        let m = lossless_pair();
        let s = BusState {
            v_mag: vec![1.0, 1.0],
            v_ang: vec![0.0, 0.0],
        };
        assert_eq!(branch_flows(&s, &m).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_line_flow_matches_closed_form() {
        let m = lossless_pair();
        let s = BusState {
            v_mag: vec![1.0, 1.0],
            v_ang: vec![0.1, 0.0],
        };
        let f = branch_flows(&s, &m).unwrap();
        let expect = 10.0 * 0.1f64.sin() * 100.0;
        assert!((f[0] - expect).abs() < 1e-9);
        assert!((f[0] - 99.833_416_646_828_15).abs() < 1e-9);
        assert!((f[1] + expect).abs() < 1e-9);
    }

    #[test]
    fn lossy_line_dissipates() {
        let m = network(2, &[(1, 2)]);
        for (a, vm) in [(0.3, 0.95), (-0.2, 1.05), (0.01, 1.0)] {
            let s = BusState {
                v_mag: vec![1.0, vm],
                v_ang: vec![0.0, a],
            };
            let f = branch_flows(&s, &m).unwrap();
            assert!(f[0] + f[1] >= 0.0);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let m = network(3, &[(1, 2), (2, 3)]);
        let s = BusState {
            v_mag: vec![1.0; 2],
            v_ang: vec![0.0; 2],
        };
        assert!(matches!(branch_flows(&s, &m), Err(Error::Dimension { .. })));
    }

    #[test]
    fn injections_are_conserved_and_sum_to_losses() {
        let m = network(5, &[(1, 2), (1, 3), (2, 3), (3, 4), (4, 5)]);
        let adm = build_admittance(&m).unwrap();
        let sol = solve(&m, &adm, &ScheduledPower::base(&m), SolverOptions::default()).unwrap();
        let fi = FlowInjection::evaluate(&sol.state, &m).unwrap();
        let conv = build_conversion(&m);
        let ainj = conv.injections_from_flows(&fi.flows);
        for (x, y) in ainj.iter().zip(&fi.injections) {
            assert!((x - y).abs() < 1e-9);
        }
        let nodal = nodal_injections(&sol.state, &adm);
        for (x, y) in nodal.iter().zip(&fi.injections) {
            assert!((x * 100.0 - y).abs() < 1e-8 * 100.0);
        }
        let losses: f64 = fi.flows.chunks(2).map(|c| c[0] + c[1]).sum();
        let total: f64 = fi.injections.iter().sum();
        assert!((losses - total).abs() < 1e-9 && total >= 0.0);
        // leaf bus 5 has a single incident branch (4-5, to end)
        assert_eq!(fi.injections[4], fi.flows[9]);
    }

    #[test]
    fn residual_recomputed_independently() {
        let m = network(5, &[(1, 2), (1, 3), (2, 3), (3, 4), (4, 5)]);
        let adm = build_admittance(&m).unwrap();
        let sched = ScheduledPower::base(&m);
        let sol = solve(&m, &adm, &sched, SolverOptions::default()).unwrap();
        let v = sol.state.voltages();
        for (i, b) in m.buses().iter().enumerate() {
            let s: Complex64 = v[i]
                * m.buses()
                    .iter()
                    .enumerate()
                    .map(|(k, _)| adm.y_bus.get(i, k) * v[k])
                    .sum::<Complex64>()
                    .conj();
            if b.kind != BusKind::Slack {
                assert!((s.re - sched.p[i]).abs() < 1e-8);
            }
            if b.kind == BusKind::Pq {
                assert!((s.im - sched.q[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn heavy_load_fails_to_converge() {
        let mut m = network(2, &[(1, 2)]);
        let mut buses = m.buses().to_vec();
        buses[1].load_p = 5000.0;
        m = NetworkModel::new("x", 100.0, buses, m.branches().to_vec(), m.generators().to_vec()).unwrap();
        assert!(matches!(
            solve_powerflow(&m, 1e-8, 20),
            Err(Error::NotConverged { .. }) | Err(Error::SingularJacobian { .. })
        ));
    }

    #[test]
    fn rebasing_puts_slack_at_zero() {
        let v = vec![Complex64::from_polar(1.0, 0.5), Complex64::from_polar(0.9, 0.2)];
        let s = BusState::from_voltages(&v, 0);
        assert_eq!(s.v_ang[0], 0.0);
        assert!((s.v_ang[1] + 0.3).abs() < 1e-15);
    }
}
