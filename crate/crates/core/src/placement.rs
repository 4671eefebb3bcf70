//! Greedy PMU placements and the incremental one-bus-at-a-time search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{fit, noisy_rows, EstimatorKind, FitContext};
use crate::eval::rmse;
use crate::measurement::{GmmNoiseModel, PmuPlacement};
use crate::netmodel::{BusId, Grid, NetworkModel};
use crate::nn::TrainConfig;
use crate::par::{self, Execution};
use crate::scenario::Dataset;

/// Bus indices sorted by id, so ties resolve toward the lower bus id.
fn id_order(model: &NetworkModel) -> Vec<usize> {
    let mut order: Vec<usize> = (0..model.bus_count()).collect();
    order.sort_by_key(|&i| model.buses()[i].id);
    order
}

fn to_placement(model: &NetworkModel, picked: &[usize]) -> PmuPlacement {
    let ids: Vec<BusId> = picked.iter().map(|&i| model.buses()[i].id).collect();
    PmuPlacement::new(model, &ids).expect("ids come from the model")
}

/// Repeatedly places a PMU at the bus whose closed neighbourhood covers the
/// most still-unobserved buses.
pub fn greedy_dominating_set(model: &NetworkModel) -> PmuPlacement {
    let adj = model.adjacency();
    let order = id_order(model);
    let mut covered = vec![false; model.bus_count()];
    let mut left = covered.len();
    let mut picked = Vec::new();
    while left > 0 {
        let gain = |i: usize| (!covered[i]) as usize + adj[i].iter().filter(|&&j| !covered[j]).count();
        let mut best = order[0];
        let mut best_gain = 0;
        for &i in &order {
            let g = gain(i);
            if g > best_gain {
                best = i;
                best_gain = g;
            }
        }
        picked.push(best);
        for j in std::iter::once(best).chain(adj[best].iter().copied()) {
            if !covered[j] {
                covered[j] = true;
                left -= 1;
            }
        }
    }
    picked.sort_by_key(|&i| model.buses()[i].id);
    to_placement(model, &picked)
}

/// Repeatedly places a PMU at the bus touching the most still-unmetered
/// branches until every in-service branch has a metered end.
pub fn greedy_vertex_cover(model: &NetworkModel) -> PmuPlacement {
    let adj = model.adjacency();
    let order = id_order(model);
    let mut placed = vec![false; model.bus_count()];
    let mut picked = Vec::new();
    loop {
        let degree = |i: usize| adj[i].iter().filter(|&&j| !placed[j]).count();
        let mut best = None;
        let mut best_deg = 0;
        for &i in &order {
            if placed[i] {
                continue;
            }
            let d = degree(i);
            if d > best_deg {
                best = Some(i);
                best_deg = d;
            }
        }
        match best {
            Some(i) => {
                placed[i] = true;
                picked.push(i);
            }
            None => break,
        }
    }
    picked.sort_by_key(|&i| model.buses()[i].id);
    to_placement(model, &picked)
}

/// Which unplaced buses are tried at each search step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "count", rename_all = "kebab-case")]
pub enum CandidatePool {
    All,
    /// The `k` unplaced buses that would newly observe the most buses
    /// (ties: higher degree, then lower id).
    TopCoverage(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub steps: usize,
    pub pool: CandidatePool,
    /// Reduced budget used for every candidate evaluation.
    pub candidate_train: TrainConfig,
    /// When set, the adopted placement is retrained with this budget and its
    /// validation RMSE recorded alongside.
    pub adopted_train: Option<TrainConfig>,
    pub n_bin: usize,
    /// Noise on training and validation features.
    pub noise: GmmNoiseModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchStep {
    pub step: usize,
    /// Bus adopted at this step; `None` for the starting placement.
    pub bus: Option<BusId>,
    pub pmu_count: usize,
    pub validation_rmse: f64,
    pub full_budget_rmse: Option<f64>,
    /// Every candidate tried at this step with its validation RMSE.
    pub candidates: Vec<(BusId, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementSearchResult {
    pub kind: EstimatorKind,
    pub sequence: Vec<SearchStep>,
}

impl PlacementSearchResult {
    pub fn final_placement(&self, model: &NetworkModel, start: &PmuPlacement) -> Result<PmuPlacement> {
        let mut buses = start.buses().to_vec();
        buses.extend(self.sequence.iter().filter_map(|s| s.bus));
        PmuPlacement::new(model, &buses)
    }
}

/// Candidate buses for extending `placement`, in id order.
pub fn candidate_buses(model: &NetworkModel, placement: &PmuPlacement, pool: CandidatePool) -> Vec<BusId> {
    let adj = model.adjacency();
    let mut placed = vec![false; model.bus_count()];
    let mut observed = vec![false; model.bus_count()];
    for &b in placement.buses() {
        let i = model.bus_index(b).expect("placement validated");
        placed[i] = true;
        observed[i] = true;
        for &j in &adj[i] {
            observed[j] = true;
        }
    }
    let order = id_order(model);
    let free: Vec<usize> = order.into_iter().filter(|&i| !placed[i]).collect();
    let mut chosen = match pool {
        CandidatePool::All => free,
        CandidatePool::TopCoverage(k) => {
            let gain = |i: usize| (!observed[i]) as usize + adj[i].iter().filter(|&&j| !observed[j]).count();
            let mut ranked = free;
            ranked.sort_by(|&a, &b| {
                gain(b)
                    .cmp(&gain(a))
                    .then(adj[b].len().cmp(&adj[a].len()))
                    .then(model.buses()[a].id.cmp(&model.buses()[b].id))
            });
            ranked.truncate(k);
            ranked
        }
    };
    chosen.sort_by_key(|&i| model.buses()[i].id);
    chosen.into_iter().map(|i| model.buses()[i].id).collect()
}

/// Validation-split RMSE (MW) of `kind` trained on `dataset` under `cfg`.
pub fn validation_rmse(
    grid: &Grid,
    dataset: &Dataset,
    kind: EstimatorKind,
    cfg: &TrainConfig,
    n_bin: usize,
    noise: &GmmNoiseModel,
    exec: Execution,
) -> Result<f64> {
    let ctx = FitContext {
        grid,
        dataset,
        noise,
        exec,
    };
    let est = fit(kind, ctx, cfg, n_bin)?.estimator;
    let val = dataset.split().validation.clone();
    let z = noisy_rows(
        dataset.z.slice(ndarray::s![val.clone(), ..]),
        dataset.sample_keys(val.clone()),
        &dataset.placement().channel_keys(),
        noise,
        exec,
    );
    let pred = est.predict(grid, z.view())?;
    Ok(rmse(pred.view(), dataset.y.slice(ndarray::s![val, ..]))?.mean)
}

/// Grows `start` one bus per step, each time adopting the candidate whose
/// retrained estimator has the lowest validation RMSE (ties: lower bus id).
///
/// Candidate features are re-extracted from the states cached in `base`,
/// so no power flow is solved during the search.
pub fn incremental_search(
    grid: &Grid,
    base: &Dataset,
    kind: EstimatorKind,
    start: &PmuPlacement,
    cfg: &SearchConfig,
    exec: Execution,
) -> Result<PlacementSearchResult> {
    if cfg.steps == 0 {
        return Err(Error::InvalidParameter("search needs at least one step".into()));
    }
    let model = &grid.model;
    let evaluate = |placement: &PmuPlacement, train: &TrainConfig, exec: Execution| -> Result<f64> {
        let ds = base.with_placement(grid, placement, exec)?;
        validation_rmse(grid, &ds, kind, train, cfg.n_bin, &cfg.noise, exec)
    };
    let mut placement = start.clone();
    let full = |p: &PmuPlacement| cfg.adopted_train.as_ref().map(|t| evaluate(p, t, exec)).transpose();
    let mut sequence = vec![SearchStep {
        step: 0,
        bus: None,
        pmu_count: placement.buses().len(),
        validation_rmse: evaluate(&placement, &cfg.candidate_train, exec)?,
        full_budget_rmse: full(&placement)?,
        candidates: Vec::new(),
    }];
    for step in 1..=cfg.steps {
        let cands = candidate_buses(model, &placement, cfg.pool);
        if cands.is_empty() {
            return Err(Error::NoCandidates);
        }
        // Candidates run concurrently; each one trains sequentially so the
        // result does not depend on scheduling.
        let scores = par::try_map_indexed(exec, cands.len(), |c| {
            let p = placement.with_bus(model, cands[c])?;
            evaluate(&p, &cfg.candidate_train, Execution::Sequential)
        })?;
        let candidates: Vec<(BusId, f64)> = cands.iter().copied().zip(scores).collect();
        let &(bus, best) = candidates
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .expect("nonempty");
        placement = placement.with_bus(model, bus)?;
        log::info!("{kind} step {step}: adopted bus {bus} (validation RMSE {best:.4} MW)");
        sequence.push(SearchStep {
            step,
            bus: Some(bus),
            pmu_count: placement.buses().len(),
            validation_rmse: best,
            full_budget_rmse: full(&placement)?,
            candidates,
        });
    }
    Ok(PlacementSearchResult { kind, sequence })
}
