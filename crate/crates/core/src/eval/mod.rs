//! Error metrics, repeated-trial evaluation and report files.

mod report;

pub use report::{sweep_csv, sweep_svg, table1_csv, table3_csv};

use ndarray::{Array1, ArrayView2, Axis};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{noisy_rows, EstimatorKind, TrainedEstimator};
use crate::measurement::GmmNoiseModel;
use crate::netmodel::Grid;
use crate::par::{self, Execution};
use crate::rng;
use crate::scenario::Dataset;

/// Per-column RMSE and its mean over columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rmse {
    pub per_feature: Vec<f64>,
    pub mean: f64,
}

pub fn rmse(pred: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<Rmse> {
    if pred.dim() != truth.dim() {
        return Err(Error::Dimension {
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    if pred.nrows() == 0 {
        return Err(Error::InvalidParameter("rmse of an empty batch".into()));
    }
    let diff = &pred - &truth;
    let per: Array1<f64> = diff
        .mapv(|d| d * d)
        .mean_axis(Axis(0))
        .expect("nonempty")
        .mapv(f64::sqrt);
    let mean = per.mean().unwrap_or(0.0);
    Ok(Rmse {
        per_feature: per.to_vec(),
        mean,
    })
}

/// Statistics of the mean RMSE over repeated random test subsets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub kind: EstimatorKind,
    pub trials: usize,
    pub subset_size: usize,
    pub seed: u64,
    pub rmse_mean: f64,
    /// Sample standard deviation over trials (0 for a single trial).
    pub rmse_std: f64,
    /// Per output RMSE pooled over every trial's predictions, MW.
    pub per_feature_rmse: Vec<f64>,
    pub trial_rmse: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct TrialSpec {
    pub trials: usize,
    pub subset_size: usize,
    pub seed: u64,
}

/// Evaluates `estimator` on `trials` subsets of the test split, each drawn
/// without replacement and given fresh noise.
///
/// Trial `t` samples rows from stream `(seed, t)` and perturbs them with
/// `noise` reseeded by `(seed, t)`, so any trial can be reproduced alone.
pub fn run_trials(
    estimator: &TrainedEstimator,
    grid: &Grid,
    dataset: &Dataset,
    noise: &GmmNoiseModel,
    spec: TrialSpec,
    exec: Execution,
) -> Result<TrialReport> {
    let test = dataset.split().test.clone();
    if spec.trials == 0 || spec.subset_size == 0 || spec.subset_size > test.len() {
        return Err(Error::InvalidParameter(format!(
            "need trials >= 1 and 1 <= subset <= {} (got {} trials of {})",
            test.len(),
            spec.trials,
            spec.subset_size
        )));
    }
    if estimator.placement != *dataset.placement() {
        return Err(Error::InvalidParameter(format!(
            "{} estimator was trained for a different PMU placement",
            estimator.kind
        )));
    }
    let channel_keys = dataset.placement().channel_keys();
    let m = grid.target_count();
    let per_trial = par::try_map_indexed(exec, spec.trials, |t| {
        let mut r = rng::stream(spec.seed, &[t as u64]);
        let rows: Vec<usize> = sample(&mut r, test.len(), spec.subset_size)
            .into_iter()
            .map(|i| test.start + i)
            .collect();
        let keys: Vec<u64> = rows.iter().map(|&i| dataset.meta.scenario_ids[i]).collect();
        let trial_noise = noise.with_seed(rng::keyed(spec.seed, &[t as u64, noise.seed]));
        let z = noisy_rows(
            dataset.z.select(Axis(0), &rows).view(),
            &keys,
            &channel_keys,
            &trial_noise,
            Execution::Sequential,
        );
        let pred = estimator.predict(grid, z.view())?;
        let truth = dataset.y.select(Axis(0), &rows);
        let err = rmse(pred.view(), truth.view())?;
        let sq: Array1<f64> = (&pred - &truth).mapv(|d| d * d).sum_axis(Axis(0));
        Ok::<_, Error>((err.mean, sq))
    })?;
    let trial_rmse: Vec<f64> = per_trial.iter().map(|(e, _)| *e).collect();
    let mut pooled = Array1::zeros(m);
    for (_, sq) in &per_trial {
        pooled += sq;
    }
    let count = (spec.trials * spec.subset_size) as f64;
    let per_feature_rmse = pooled.mapv(|s: f64| (s / count).sqrt()).to_vec();
    let (rmse_mean, rmse_std) = mean_std(&trial_rmse);
    Ok(TrialReport {
        kind: estimator.kind,
        trials: spec.trials,
        subset_size: spec.subset_size,
        seed: spec.seed,
        rmse_mean,
        rmse_std,
        per_feature_rmse,
        trial_rmse,
    })
}

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
