//! Solver and admittance checks against committed PYPOWER outputs
//! (`tools/export_cases.py`).

use std::path::PathBuf;

use flowcast_core::netmodel::{build_admittance, build_conversion, read_case, BusId};
use flowcast_core::powerflow::{
    branch_flows, bus_injections, mismatch, nodal_injections, solve, ScheduledPower, SolverOptions,
};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn read_csv(name: &str) -> Vec<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(data(name)).unwrap();
    rdr.records()
        .map(|r| r.unwrap().iter().map(|x| x.parse().unwrap()).collect())
        .collect()
}

fn check_case(case: &str, max_iter_expected: usize) {
    let model = read_case(data(&format!("{case}.m"))).unwrap();
    let adm = build_admittance(&model).unwrap();
    let sol = solve(&model, &adm, &ScheduledPower::base(&model), SolverOptions::default()).unwrap();
    assert!(
        sol.iterations <= max_iter_expected,
        "{case}: {} iterations",
        sol.iterations
    );
    for row in read_csv(&format!("fixtures/{case}_bus.csv")) {
        let i = model.bus_index(BusId(row[0] as u32)).unwrap();
        assert!((sol.state.v_mag[i] - row[1]).abs() < 1e-6, "{case} bus {} vm", row[0]);
        assert!((sol.state.v_ang[i] - row[2]).abs() < 1e-6, "{case} bus {} va", row[0]);
    }
    let flows = branch_flows(&sol.state, &model).unwrap();
    for (k, row) in read_csv(&format!("fixtures/{case}_branch.csv")).iter().enumerate() {
        assert!((flows[2 * k] - row[2]).abs() < 1e-4, "{case} branch {k} from-end flow");
        assert!(
            (flows[2 * k + 1] - row[3]).abs() < 1e-4,
            "{case} branch {k} to-end flow"
        );
    }

    // residual recomputed from scratch, not from solver internals
    let res = mismatch(&model, &adm, &sol.state, &ScheduledPower::base(&model));
    assert!(res.iter().all(|r| r.abs() < 1e-8));

    let inj = bus_injections(&sol.state, &model).unwrap();
    let conv = build_conversion(&model);
    let ainj = conv.injections_from_flows(&flows);
    let nodal = nodal_injections(&sol.state, &adm);
    for i in 0..model.bus_count() {
        assert!((inj[i] - ainj[i]).abs() < 1e-6);
        assert!((inj[i] / model.base_power() - nodal[i]).abs() < 1e-8);
    }
}

#[test]
fn three_bus_matches_reference_solver() {
    check_case("case3", 10);
}

#[test]
fn nine_bus_matches_reference_solver() {
    check_case("case9", 10);
}

#[test]
fn ieee118_matches_reference_solver() {
    check_case("case118", 10);
}

#[test]
fn three_bus_admittance_matches_reference() {
    let model = read_case(data("case3.m")).unwrap();
    let y = build_admittance(&model).unwrap().y_bus.to_dense();
    for row in read_csv("fixtures/case3_ybus.csv") {
        let (i, j) = (row[0] as usize, row[1] as usize);
        assert!((y[(i, j)].re - row[2]).abs() < 1e-12, "G[{i},{j}]");
        assert!((y[(i, j)].im - row[3]).abs() < 1e-12, "B[{i},{j}]");
    }
}

#[test]
fn ieee118_counts() {
    let model = read_case(data("case118.m")).unwrap();
    assert_eq!(model.bus_count(), 118);
    assert_eq!(model.branches().len(), 186);
    assert_eq!(model.generators().len(), 54);
    assert_eq!(model.load_buses().len(), 99);
    let conv = build_conversion(&model);
    assert_eq!(conv.a.shape(), (118, 372));
    assert_eq!(conv.b.shape(), (490, 372));
}

#[test]
fn ieee118_json_round_trip() {
    let model = read_case(data("case118.m")).unwrap();
    let back = flowcast_core::NetworkModel::from_json(&model.to_json()).unwrap();
    assert_eq!(model, back);
}
