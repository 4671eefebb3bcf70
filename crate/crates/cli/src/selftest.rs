//! Fast oracle and invariant checks bundled into the binary.
//!
//! Case files and reference solutions are compiled in, so `flowcast selftest`
//! works from any directory. Every check is seeded; the printed report is
//! identical from run to run.

use flowcast_core::estimators::{conservation_gap, fit, pic_loss, EstimatorKind, FitContext};
use flowcast_core::lse::{build_measurement_model, check_observability, lse_noise_study};
use flowcast_core::measurement::{default_hv_placement, GmmNoiseModel};
use flowcast_core::netmodel::{build_admittance, build_conversion, parse_case, NetworkModel};
use flowcast_core::nn::{flatten_gradients, init_network, parameter_mut, TrainConfig};
use flowcast_core::par::Execution;
use flowcast_core::placement::{greedy_dominating_set, greedy_vertex_cover};
use flowcast_core::powerflow::{nodal_injections, solve, ScheduledPower, SolverOptions};
use flowcast_core::rng;
use flowcast_core::scenario::{build_dataset, generate_scenarios, DatasetSizes, ScenarioParams};
use flowcast_core::Grid;
use nalgebra::DMatrix;
use ndarray::{s, Array2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

const CASE3: &str = include_str!("../../../data/case3.m");
const CASE9: &str = include_str!("../../../data/case9.m");
const CASE118: &str = include_str!("../../../data/case118.m");
const CASE3_BUS: &str = include_str!("../../../data/fixtures/case3_bus.csv");
const CASE9_BUS: &str = include_str!("../../../data/fixtures/case9_bus.csv");
const CASE118_BUS: &str = include_str!("../../../data/fixtures/case118_bus.csv");

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {:<28} {}", self.name, self.detail)
    }
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn failed(name: &'static str, err: impl std::fmt::Display) -> Check {
    check(name, false, format!("error: {err}"))
}

macro_rules! attempt {
    ($name:expr, $e:expr) => {
        match $e {
            Ok(v) => v,
            Err(err) => return failed($name, err),
        }
    };
}

fn to_array(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Largest voltage deviation (pu / rad) from a reference bus table.
pub fn powerflow_deviation(model: &NetworkModel, reference: &str) -> flowcast_core::Result<f64> {
    let adm = build_admittance(model)?;
    let sol = solve(model, &adm, &ScheduledPower::base(model), SolverOptions::default())?;
    let mut worst = 0.0f64;
    for line in reference.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let v: Vec<f64> = line
            .split(',')
            .map(|x| x.trim().parse().expect("fixture is numeric"))
            .collect();
        let i = model
            .bus_index(flowcast_core::netmodel::BusId(v[0] as u32))
            .expect("fixture bus exists");
        worst = worst
            .max((sol.state.v_mag[i] - v[1]).abs())
            .max((sol.state.v_ang[i] - v[2]).abs());
    }
    Ok(worst)
}

fn powerflow_oracle() -> Check {
    const NAME: &str = "powerflow-oracle";
    let mut worst = 0.0f64;
    for (text, fixture) in [(CASE3, CASE3_BUS), (CASE9, CASE9_BUS), (CASE118, CASE118_BUS)] {
        let model = attempt!(NAME, parse_case(text));
        worst = worst.max(attempt!(NAME, powerflow_deviation(&model, fixture)));
    }
    check(
        NAME,
        worst < 1e-6,
        format!("max |dV| {worst:.1e} over 3, 9 and 118 buses"),
    )
}

fn conversion_identity(grid: &Grid) -> Check {
    let b = to_array(&grid.conversion.b);
    let p = to_array(&grid.conversion.pseudo_inverse());
    let dev = (p.dot(&b) - Array2::<f64>::eye(b.ncols()))
        .iter()
        .fold(0.0f64, |m, d| m.max(d.abs()));
    check("pinv-identity", dev < 1e-10, format!("max |P·B - I| {dev:.1e}"))
}

fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = rng::seeded(seed);
    Array2::from_shape_fn((rows, cols), |_| r.sample(StandardNormal))
}

fn mlp_gradient() -> Check {
    const NAME: &str = "mlp-gradient";
    let mut worst = 0.0f64;
    for (dims, seed) in [(&[9usize, 7, 5, 3][..], 1u64), (&[4, 6, 6, 6, 2][..], 2)] {
        let net = attempt!(NAME, init_network(dims, seed));
        let x = random(5, dims[0], seed + 10);
        let r = random(5, *dims.last().unwrap(), seed + 20);
        let scalar = |n: &flowcast_core::nn::MlpNetwork| (n.forward(x.view()).expect("shapes") * &r).sum();
        let (_, cache) = attempt!(NAME, net.forward_cached(x.view()));
        let analytic = flatten_gradients(&attempt!(NAME, net.backward(&cache, r.view())));
        let h = 1e-5;
        for (k, &a) in analytic.iter().enumerate() {
            let mut p = net.clone();
            *parameter_mut(&mut p, k) += h;
            let mut m = net.clone();
            *parameter_mut(&mut m, k) -= h;
            let fd = (scalar(&p) - scalar(&m)) / (2.0 * h);
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
        }
    }
    check(NAME, worst < 1e-5, format!("max relative error {worst:.1e}"))
}

fn pic_gradient() -> Check {
    const NAME: &str = "pic-loss-gradient";
    // three buses, two in-service branches: B is 7 x 4
    let model = attempt!(NAME, parse_case(CASE3));
    let model = attempt!(NAME, model.with_branch_status(&[true, true, false]));
    let conv = build_conversion(&model);
    let b = to_array(&conv.b);
    let p = to_array(&conv.pseudo_inverse());
    let y = random(3, b.nrows(), 31) * 5.0;
    let f = random(3, b.ncols(), 32) * 5.0;
    let (_, g) = attempt!(NAME, pic_loss(y.view(), f.view(), p.view(), b.view()));
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..f.nrows() {
        for j in 0..f.ncols() {
            let mut fp = f.clone();
            fp[(i, j)] += h;
            let mut fm = f.clone();
            fm[(i, j)] -= h;
            let lp = attempt!(NAME, pic_loss(y.view(), fp.view(), p.view(), b.view())).0;
            let lm = attempt!(NAME, pic_loss(y.view(), fm.view(), p.view(), b.view())).0;
            let fd = (lp - lm) / (2.0 * h);
            worst = worst.max((fd - g[(i, j)]).abs() / fd.abs().max(g[(i, j)].abs()).max(1e-6));
        }
    }
    check(
        NAME,
        worst < 1e-5,
        format!("B {}x{}, max relative error {worst:.1e}", b.nrows(), b.ncols()),
    )
}

fn gmm_calibration() -> Check {
    let noise = GmmNoiseModel::field_mixture(2024);
    let n = 200_000u64;
    let (mut mag, mut ang2, mut tve2) = (0.0, 0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    for s in 0..n {
        let z = noise.perturb(one, s, 0);
        mag += (z.norm() - 1.0) * 100.0;
        ang2 += z.arg().to_degrees().powi(2);
        tve2 += (z - one).norm_sqr();
    }
    let nf = n as f64;
    let (mag, ang, tve) = (mag / nf, (ang2 / nf).sqrt(), (tve2 / nf).sqrt() * 100.0);
    let ok = (mag - 0.2).abs() <= 0.02 && (ang - 0.2905).abs() <= 0.01 && (0.70..=0.85).contains(&tve);
    check(
        "gmm-calibration",
        ok,
        format!("mean |V| error {mag:.4}%, rms angle {ang:.4} deg, rms TVE {tve:.4}%"),
    )
}

fn placements(grid: &Grid) -> Check {
    const NAME: &str = "greedy-placements";
    let dom = greedy_dominating_set(&grid.model);
    let lmm = attempt!(NAME, build_measurement_model(&grid.model, &grid.admittance, &dom));
    let vc = greedy_vertex_cover(&grid.model);
    let covered = grid
        .model
        .in_service_branches()
        .all(|(_, br)| vc.buses().contains(&br.from_bus) || vc.buses().contains(&br.to_bus));
    let nd = dom.buses().len();
    let nv = vc.buses().len();
    check(
        NAME,
        check_observability(&lmm) && (32..=45).contains(&nd) && covered && nv >= 61,
        format!("dominating set {nd} (observable), vertex cover {nv}"),
    )
}

/// The dataset-backed checks share one small 118-bus dataset.
fn dataset_checks(grid: &Grid) -> Vec<Check> {
    let sizes = DatasetSizes {
        train: 240,
        validation: 60,
        test: 100,
    };
    let hv = default_hv_placement(&grid.model);
    let built = generate_scenarios(&grid.model, sizes.oversampled(), ScenarioParams::default(), 7)
        .and_then(|sc| build_dataset(grid, &sc, &hv, sizes, 7, Execution::Parallel));
    let ds = match built {
        Ok(ds) => ds,
        Err(e) => {
            return [
                "conservation",
                "projected-targets",
                "lse-noise-free",
                "pic-conservation",
            ]
            .into_iter()
            .map(|n| failed(n, &e))
            .collect()
        }
    };
    let mut out = Vec::new();

    let gap = ds.conservation_gap(grid);
    let mb = grid.flow_count();
    let base = grid.model.base_power();
    // labels against the nodal power balance computed straight from Ybus
    let nodal = (0..ds.len()).fold(0.0f64, |m, r| {
        let inj = nodal_injections(&ds.state_at(r), &grid.admittance);
        inj.iter()
            .zip(ds.y.row(r).iter().skip(mb))
            .fold(m, |m, (p, y)| m.max((p * base - y).abs()))
    });
    out.push(check(
        "conservation",
        gap < 1e-6 && nodal < 1e-6,
        format!(
            "{} samples, max |inj - A f| {gap:.1e} MW, max |inj - nodal| {nodal:.1e} MW",
            ds.len()
        ),
    ));

    let projected = ds.y.dot(&to_array(&grid.conversion.pseudo_inverse()).t());
    let dev = (&projected - &ds.y.slice(s![.., ..mb]))
        .iter()
        .fold(0.0f64, |m, d| m.max(d.abs()));
    out.push(check(
        "projected-targets",
        dev < 1e-6,
        format!("max |P·y - f| {dev:.1e} MW"),
    ));

    out.push((|| {
        const NAME: &str = "lse-noise-free";
        let dom = greedy_dominating_set(&grid.model);
        let states: Vec<_> = (0..50).map(|i| ds.state_at(i)).collect();
        let noises = [("none".to_string(), GmmNoiseModel::none(0))];
        let r = attempt!(
            NAME,
            lse_noise_study(
                grid,
                &dom,
                &states,
                &ds.meta.scenario_ids[..50],
                &noises,
                Execution::Parallel
            )
        );
        check(NAME, r[0].flow_mw < 1e-6, format!("flow RMSE {:.1e} MW", r[0].flow_mw))
    })());

    out.push((|| {
        const NAME: &str = "pic-conservation";
        let noise = GmmNoiseModel::field_mixture(11);
        let ctx = FitContext {
            grid,
            dataset: &ds,
            noise: &noise,
            exec: Execution::Parallel,
        };
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 32,
            seed: 5,
            shuffle_seed: 6,
            ..TrainConfig::default()
        };
        let test = ds.split().test.clone();
        let z = ctx.features(test);
        let mut gaps = Vec::new();
        for kind in [EstimatorKind::Pic, EstimatorKind::Direct] {
            let est = attempt!(NAME, fit(kind, ctx, &cfg, 5)).estimator;
            let pred = attempt!(NAME, est.predict(grid, z.view()));
            gaps.push(conservation_gap(grid, pred.view()));
        }
        check(
            NAME,
            gaps[0] <= 1e-9 && gaps[1] > 0.0,
            format!("PIC gap {:.1e} MW, Direct gap {:.1e} MW", gaps[0], gaps[1]),
        )
    })());
    out
}

/// Runs every check in a fixed order.
pub fn run() -> Vec<Check> {
    let mut out = vec![powerflow_oracle(), mlp_gradient(), pic_gradient(), gmm_calibration()];
    let grid = match parse_case(CASE118).and_then(Grid::new) {
        Ok(g) => g,
        Err(e) => {
            out.push(failed("case118", e));
            return out;
        }
    };
    out.push(conversion_identity(&grid));
    out.push(placements(&grid));
    out.extend(dataset_checks(&grid));
    out
}

#[cfg(test)]
mod tests {
    #[test]
    fn every_check_passes() {
        let checks = super::run();
        for c in &checks {
            eprintln!("{c}");
        }
        assert!(checks.iter().all(|c| c.passed));
        assert_eq!(checks.len(), 10);
    }
}
