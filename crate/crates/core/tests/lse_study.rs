//! State estimation and placement checks on the 118-bus case.

use std::path::PathBuf;

use flowcast_core::lse::{build_measurement_model, check_observability, lse_noise_study};
use flowcast_core::measurement::{default_hv_placement, gaussian_noise_model, GmmNoiseModel};
use flowcast_core::netmodel::read_case;
use flowcast_core::par::Execution;
use flowcast_core::placement::{greedy_dominating_set, greedy_vertex_cover};
use flowcast_core::scenario::{build_dataset, generate_scenarios, DatasetSizes, ScenarioParams};
use flowcast_core::Grid;

fn grid() -> Grid {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/case118.m");
    Grid::new(read_case(path).unwrap()).unwrap()
}

#[test]
fn greedy_placements_on_118() {
    let g = grid();
    let dom = greedy_dominating_set(&g.model);
    eprintln!("dominating set size {}", dom.buses().len());
    assert!((32..=45).contains(&dom.buses().len()));
    let lmm = build_measurement_model(&g.model, &g.admittance, &dom).unwrap();
    assert_eq!(lmm.rank(), 118);
    assert!(check_observability(&lmm));
    let vc = greedy_vertex_cover(&g.model);
    eprintln!("vertex cover size {}", vc.buses().len());
    assert!(vc.buses().len() >= 61);
    let hv = default_hv_placement(&g.model);
    assert!(!check_observability(
        &build_measurement_model(&g.model, &g.admittance, &hv).unwrap()
    ));
}

#[test]
fn noise_study_on_118() {
    let g = grid();
    let dom = greedy_dominating_set(&g.model);
    let sc = generate_scenarios(&g.model, 300, ScenarioParams::default(), 11).unwrap();
    let sizes = DatasetSizes {
        train: 0,
        validation: 0,
        test: 250,
    };
    let ds = build_dataset(&g, &sc, &dom, sizes, 11, Execution::Parallel).unwrap();
    let states: Vec<_> = (0..ds.len()).map(|i| ds.state_at(i)).collect();
    let noises = vec![
        ("none".to_string(), GmmNoiseModel::none(3)),
        ("gaussian".to_string(), gaussian_noise_model(0.01, 3).unwrap()),
        ("gmm".to_string(), GmmNoiseModel::field_mixture(3)),
    ];
    let r = lse_noise_study(&g, &dom, &states, &ds.meta.scenario_ids, &noises, Execution::Parallel).unwrap();
    let [clean, gauss, gmm] = &r[..] else {
        panic!("three rows")
    };
    assert!(clean.flow_mw < 1e-6 && clean.injection_mw < 1e-6, "{clean:?}");
    assert!(clean.v_mag_pu < 1e-9);
    assert!((0.4..=4.0).contains(&gauss.flow_mw), "{gauss:?}");
    // LSE is linear in the phasor errors, so errors track the RMS TVE of
    // each noise model (0.774 % for the mixture against 1 % Gaussian)
    for (g, m) in [(gauss.flow_mw, gmm.flow_mw), (gauss.injection_mw, gmm.injection_mw)] {
        let ratio = m / g;
        assert!((0.6..=1.2).contains(&ratio), "mixture/gaussian ratio {ratio}");
    }
}
