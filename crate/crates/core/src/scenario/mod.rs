//! Correlated load-variation scenarios and labeled measurement datasets.

mod dataset;

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::NetworkModel;
use crate::rng;

pub use dataset::{build_dataset, Dataset, DatasetMeta, DatasetSizes, Split};

/// Lower and upper clip applied to every load multiplier.
pub const MULTIPLIER_CLIP: (f64, f64) = (0.3, 1.7);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioParams {
    /// Peak deviation of the shared daily factor from 1.
    pub diurnal_amplitude: f64,
    /// Standard deviation of each load's deviation around the daily factor.
    pub noise_sigma: f64,
    /// Share of that deviation common to all loads, in [0, 1].
    pub correlation: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            diurnal_amplitude: 0.25,
            noise_sigma: 0.1,
            correlation: 0.5,
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..0.7).contains(&self.diurnal_amplitude)
            && (0.0..=0.5).contains(&self.noise_sigma)
            && (0.0..=1.0).contains(&self.correlation);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "scenario parameters out of range: {self:?} (amplitude in [0, 0.7), sigma in [0, 0.5], correlation in [0, 1])"
            )))
        }
    }

    /// Standard deviation of a single load's multiplier, ignoring clipping:
    /// `sqrt((1 + A²/2)(1 + σ²) − 1)` for a sinusoidal daily factor sampled
    /// uniformly over the day.
    pub fn aggregate_sigma(&self) -> f64 {
        let a = self.diurnal_amplitude;
        let s = self.noise_sigma;
        ((1.0 + a * a / 2.0) * (1.0 + s * s) - 1.0).sqrt()
    }
}

/// Multiplicative load factors, one row per scenario and one column per load bus.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadScenarioSet {
    pub multipliers: Array2<f64>,
    /// Bus index of each column.
    pub load_buses: Vec<usize>,
    pub seed: u64,
    pub params: ScenarioParams,
}

impl LoadScenarioSet {
    pub fn len(&self) -> usize {
        self.multipliers.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Full per-bus multiplier vector for scenario `s` (1.0 at load-free buses).
    pub fn bus_multipliers(&self, s: usize, bus_count: usize) -> Vec<f64> {
        let mut m = vec![1.0; bus_count];
        for (&bus, &x) in self.load_buses.iter().zip(self.multipliers.row(s)) {
            m[bus] = x;
        }
        m
    }
}

/// `multiplier(s, l) = D(s) · (1 + ε(s, l))`, clipped to [`MULTIPLIER_CLIP`].
///
/// `D(s) = 1 + A·sin(2πt/24)` with the hour `t` uniform over the day, and
/// `ε(s, l) = σ(√ρ·g(s) + √(1−ρ)·e(s, l))` with standard normal `g`, `e`.
/// Scenario `s` draws from its own keyed stream, so any prefix of a larger
/// set is identical to a smaller set with the same seed.
pub fn generate_scenarios(
    model: &NetworkModel,
    count: usize,
    params: ScenarioParams,
    seed: u64,
) -> Result<LoadScenarioSet> {
    if count == 0 {
        return Err(Error::InvalidParameter("scenario count must be >= 1".into()));
    }
    params.validate()?;
    let load_buses = model.load_buses();
    let nl = load_buses.len();
    let shared = params.correlation.sqrt();
    let own = (1.0 - params.correlation).sqrt();
    let mut multipliers = Array2::zeros((count, nl));
    for (s, mut row) in multipliers.rows_mut().into_iter().enumerate() {
        let mut r = rng::stream(seed, &[s as u64]);
        let hour: f64 = r.random_range(0.0..24.0);
        let daily = 1.0 + params.diurnal_amplitude * (2.0 * PI * hour / 24.0).sin();
        let g: f64 = r.sample(StandardNormal);
        for x in row.iter_mut() {
            let e: f64 = r.sample(StandardNormal);
            let eps = params.noise_sigma * (shared * g + own * e);
            *x = (daily * (1.0 + eps)).clamp(MULTIPLIER_CLIP.0, MULTIPLIER_CLIP.1);
        }
    }
    Ok(LoadScenarioSet {
        multipliers,
        load_buses,
        seed,
        params,
    })
}
