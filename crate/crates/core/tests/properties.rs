//! Randomized invariants.

use flowcast_core::estimators::make_bins;
use flowcast_core::eval::rmse;
use flowcast_core::measurement::{features_to_phasors, phasors_to_features, GmmNoiseModel};
use flowcast_core::netmodel::{build_conversion, parse_case, BusId, NetworkModel};
use flowcast_core::nn::Scaler;
use flowcast_core::placement::{candidate_buses, greedy_dominating_set, greedy_vertex_cover, CandidatePool};
use flowcast_core::powerflow::{solve, ScheduledPower, SolverOptions};
use flowcast_core::{measurement::PmuPlacement, netmodel::build_admittance, powerflow::FlowInjection};
use ndarray::Array2;
use num_complex::Complex64;
use proptest::prelude::*;

/// Ring of `n` buses plus chords, 20 MW load on every non-slack bus.
fn meshed(n: usize, chords: &[(usize, usize)]) -> NetworkModel {
    let mut text = String::from("mpc.baseMVA = 100;\nmpc.bus = [\n");
    for i in 1..=n {
        let (kind, load) = if i == 1 { (3, 0) } else { (1, 20) };
        text += &format!("{i} {kind} {load} 5 0 0 1 1 0 138 1 1.1 0.9;\n");
    }
    text += "];\nmpc.gen = [\n1 0 0 999 -999 1.0 100 1 999 0;\n];\nmpc.branch = [\n";
    let mut edges: Vec<(usize, usize)> = (1..=n).map(|i| (i, i % n + 1)).collect();
    edges.extend(
        chords
            .iter()
            .map(|&(a, b)| (a % n + 1, b % n + 1))
            .filter(|(a, b)| a != b),
    );
    for (a, b) in edges {
        text += &format!("{a} {b} 0.01 0.05 0.02 0 0 0 0 0 1 -360 360;\n");
    }
    text += "];\n";
    parse_case(&text).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn injections_equal_summed_flows(n in 3usize..12, chords in prop::collection::vec((0usize..12, 0usize..12), 0..6), scale in 0.3f64..1.5) {
        let model = meshed(n, &chords);
        let adm = build_admittance(&model).unwrap();
        let mult = vec![scale; model.bus_count()];
        let sol = solve(&model, &adm, &ScheduledPower::scaled(&model, &mult), SolverOptions::default()).unwrap();
        let fi = FlowInjection::evaluate(&sol.state, &model).unwrap();
        let conv = build_conversion(&model);
        for (a, b) in conv.injections_from_flows(&fi.flows).iter().zip(&fi.injections) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        let pb = conv.pseudo_inverse() * &conv.b;
        let eye = nalgebra_eye(pb.nrows());
        prop_assert!((pb - eye).amax() < 1e-10);
    }

    #[test]
    fn greedy_placements_are_valid(n in 2usize..15, chords in prop::collection::vec((0usize..15, 0usize..15), 0..8)) {
        let model = meshed(n, &chords);
        let dom = greedy_dominating_set(&model);
        let adj = model.adjacency();
        let placed: Vec<usize> = dom.buses().iter().map(|b| model.bus_index(*b).unwrap()).collect();
        for (i, nbrs) in adj.iter().enumerate() {
            prop_assert!(placed.contains(&i) || nbrs.iter().any(|j| placed.contains(j)));
        }
        let vc = greedy_vertex_cover(&model);
        for (_, br) in model.in_service_branches() {
            prop_assert!(vc.buses().contains(&br.from_bus) || vc.buses().contains(&br.to_bus));
        }
        let cands = candidate_buses(&model, &dom, CandidatePool::TopCoverage(3));
        prop_assert!(cands.len() <= 3);
        prop_assert!(cands.iter().all(|c| !dom.buses().contains(c)));
        let mut sorted = cands.clone();
        sorted.sort();
        prop_assert_eq!(sorted, cands);
    }

    #[test]
    fn scaler_round_trips(rows in 2usize..20, cols in 1usize..6, seed in 0u64..1000) {
        let data = Array2::from_shape_fn((rows, cols), |(i, j)| ((i * 31 + j * 17 + seed as usize) % 23) as f64 * 0.7 - 3.0);
        let s = Scaler::fit(data.view()).unwrap();
        let back = s.inverse(s.transform(data.view()).view());
        for (a, b) in back.iter().zip(data.iter()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn bins_partition_every_flow(cols in 1usize..40, n_bin in 1usize..8, seed in 0u64..100) {
        prop_assume!(n_bin <= cols);
        let flows = Array2::from_shape_fn((5, cols), |(i, j)| ((i + 1) * (j + 3) * (seed as usize + 1) % 97) as f64);
        let b = make_bins(flows.view(), n_bin).unwrap();
        let mut all = b.concat_order();
        all.sort_unstable();
        prop_assert_eq!(all, (0..cols).collect::<Vec<_>>());
        let sizes: Vec<usize> = b.bins.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn rmse_of_constant_offset(rows in 1usize..30, c in -50.0f64..50.0) {
        let truth = Array2::from_shape_fn((rows, 3), |(i, j)| (i + j) as f64);
        let mut pred = truth.clone();
        pred.column_mut(1).mapv_inplace(|x| x + c);
        let r = rmse(pred.view(), truth.view()).unwrap();
        prop_assert!(r.per_feature[0] == 0.0 && r.per_feature[2] == 0.0);
        prop_assert!((r.per_feature[1] - c.abs()).abs() < 1e-9);
    }

    #[test]
    fn noise_is_keyed_by_sample_and_channel(re in -2.0f64..2.0, im in -2.0f64..2.0, sample in 0u64..1000, key in 0u64..1000) {
        let noise = GmmNoiseModel::field_mixture(5);
        let z = Complex64::new(re, im);
        prop_assert_eq!(noise.perturb(z, sample, key), noise.perturb(z, sample, key));
        prop_assert_eq!(GmmNoiseModel::none(5).perturb(z, sample, key), z);
        let mut f = vec![0.0; 2];
        phasors_to_features(&[z], &mut f);
        prop_assert_eq!(features_to_phasors(&f), vec![z]);
    }
}

fn nalgebra_eye(n: usize) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::identity(n, n)
}

#[test]
fn placement_growth_keeps_existing_channels() {
    let model = meshed(6, &[(0, 3)]);
    let p = PmuPlacement::new(&model, &[BusId(2)]).unwrap();
    let q = p.with_bus(&model, BusId(5)).unwrap();
    for c in p.channels() {
        assert!(q.channels().contains(c));
    }
    assert_eq!(q.buses().len(), 2);
}
