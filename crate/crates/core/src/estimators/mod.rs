//! Learned and model-based flow/injection estimators behind one interface.

mod dnn;
mod linear;
mod pic;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lse::{build_measurement_model, check_observability, estimate_states};
use crate::measurement::{features_to_phasors, perturb_features, GmmNoiseModel, PmuPlacement};
use crate::netmodel::Grid;
use crate::nn::{MlpNetwork, Scaler, TrainConfig, TrainHistory};
use crate::par::{self, Execution};
use crate::powerflow::{BusState, FlowInjection};
use crate::scenario::Dataset;

pub use dnn::{train_direct_dnn, train_indirect_dnn};
pub use linear::train_lr;
pub use pic::{make_bins, pic_loss, train_pic_dnn, BinPartition, PicObjective};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Lse,
    Lr,
    Direct,
    Indirect,
    Pic,
}

impl EstimatorKind {
    /// The four models fitted from data.
    pub const LEARNED: [EstimatorKind; 4] = [
        EstimatorKind::Lr,
        EstimatorKind::Direct,
        EstimatorKind::Indirect,
        EstimatorKind::Pic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Lse => "lse",
            EstimatorKind::Lr => "lr",
            EstimatorKind::Direct => "direct",
            EstimatorKind::Indirect => "indirect",
            EstimatorKind::Pic => "pic",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            EstimatorKind::Lse => "LSE",
            EstimatorKind::Lr => "LR",
            EstimatorKind::Direct => "Direct DNN",
            EstimatorKind::Indirect => "Indirect DNN",
            EstimatorKind::Pic => "PIC-DNN",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lse" => Ok(EstimatorKind::Lse),
            "lr" => Ok(EstimatorKind::Lr),
            "direct" | "direct-dnn" => Ok(EstimatorKind::Direct),
            "indirect" | "indirect-dnn" => Ok(EstimatorKind::Indirect),
            "pic" | "pic-dnn" => Ok(EstimatorKind::Pic),
            "svr" => Err(Error::Unsupported("svr".into())),
            other => Err(Error::InvalidParameter(format!(
                "unknown estimator '{other}' (expected lse, lr, direct, indirect or pic)"
            ))),
        }
    }
}

/// Kind-specific parameters. Network outputs are standardized and mapped
/// back through the stored scalers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Payload {
    Lse,
    Lr {
        inputs: Scaler,
        /// `(features + 1) × outputs`; the last row is the intercept.
        coefficients: Array2<f64>,
    },
    Direct {
        inputs: Scaler,
        outputs: Scaler,
        net: MlpNetwork,
    },
    Indirect {
        inputs: Scaler,
        states: Scaler,
        net: MlpNetwork,
    },
    Pic {
        inputs: Scaler,
        flows: Scaler,
        bins: BinPartition,
        nets: Vec<MlpNetwork>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedEstimator {
    pub kind: EstimatorKind,
    pub placement: PmuPlacement,
    pub conversion_checksum: String,
    pub payload: Payload,
}

/// Everything estimator training reads: the grid, the dataset and the noise
/// put on its training/validation features.
#[derive(Clone, Copy)]
pub struct FitContext<'a> {
    pub grid: &'a Grid,
    pub dataset: &'a Dataset,
    pub noise: &'a GmmNoiseModel,
    pub exec: Execution,
}

impl FitContext<'_> {
    /// Features of rows `range`, each perturbed with its own sample key.
    pub fn features(&self, range: std::ops::Range<usize>) -> Array2<f64> {
        noisy_rows(
            self.dataset.z.slice(s![range.clone(), ..]),
            self.dataset.sample_keys(range),
            &self.dataset.placement().channel_keys(),
            self.noise,
            self.exec,
        )
    }

    fn check(&self) -> Result<()> {
        let split = self.dataset.split();
        if split.train.is_empty() {
            return Err(Error::InvalidParameter("training split is empty".into()));
        }
        if self.dataset.y.ncols() != self.grid.target_count() {
            return Err(Error::Dimension {
                expected: self.grid.target_count(),
                actual: self.dataset.y.ncols(),
            });
        }
        Ok(())
    }
}

/// Copy of `z` with noise drawn per row under `keys[row]`.
pub fn noisy_rows(
    z: ArrayView2<f64>,
    keys: &[u64],
    channel_keys: &[u64],
    noise: &GmmNoiseModel,
    exec: Execution,
) -> Array2<f64> {
    let mut out = z.to_owned();
    if noise.is_identity() {
        return out;
    }
    let width = out.ncols();
    let slice = out.as_slice_mut().expect("owned arrays are contiguous");
    par::for_each_row_mut(exec, slice, width, |r, row| {
        perturb_features(row, channel_keys, keys[r], noise)
    });
    out
}

/// A trained estimator plus its loss history when it is a network.
pub struct Fitted {
    pub estimator: TrainedEstimator,
    pub history: Option<TrainHistory>,
}

pub fn lse_estimator(grid: &Grid, placement: &PmuPlacement) -> Result<TrainedEstimator> {
    let lmm = build_measurement_model(&grid.model, &grid.admittance, placement)?;
    if !check_observability(&lmm) {
        return Err(Error::Unobservable);
    }
    Ok(TrainedEstimator {
        kind: EstimatorKind::Lse,
        placement: placement.clone(),
        conversion_checksum: grid.conversion.checksum(),
        payload: Payload::Lse,
    })
}

/// Trains `kind` with the shared configuration. `n_bin` only affects PIC-DNN.
pub fn fit(kind: EstimatorKind, ctx: FitContext, cfg: &TrainConfig, n_bin: usize) -> Result<Fitted> {
    match kind {
        EstimatorKind::Lse => Ok(Fitted {
            estimator: lse_estimator(ctx.grid, ctx.dataset.placement())?,
            history: None,
        }),
        EstimatorKind::Lr => Ok(Fitted {
            estimator: train_lr(ctx)?,
            history: None,
        }),
        EstimatorKind::Direct => train_direct_dnn(ctx, cfg),
        EstimatorKind::Indirect => train_indirect_dnn(ctx, cfg),
        EstimatorKind::Pic => train_pic_dnn(ctx, cfg, n_bin),
    }
}

impl TrainedEstimator {
    pub(crate) fn new(ctx: &FitContext, kind: EstimatorKind, payload: Payload) -> TrainedEstimator {
        TrainedEstimator {
            kind,
            placement: ctx.dataset.placement().clone(),
            conversion_checksum: ctx.grid.conversion.checksum(),
            payload,
        }
    }

    pub fn feature_count(&self) -> usize {
        self.placement.feature_count()
    }

    /// Flow + injection estimates (MW) for each row of `z`.
    pub fn predict(&self, grid: &Grid, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        if grid.conversion.checksum() != self.conversion_checksum {
            return Err(Error::ConversionMismatch);
        }
        self.predict_unchecked(grid, z)
    }

    /// As [`predict`](Self::predict), one row at a time, also returning each
    /// row's wall-clock latency in seconds.
    pub fn predict_timed(&self, grid: &Grid, z: ArrayView2<f64>) -> Result<(Array2<f64>, Vec<f64>)> {
        if grid.conversion.checksum() != self.conversion_checksum {
            return Err(Error::ConversionMismatch);
        }
        let mut out = Array2::zeros((z.nrows(), grid.target_count()));
        let mut lat = Vec::with_capacity(z.nrows());
        for (r, row) in z.axis_iter(Axis(0)).enumerate() {
            let t = Instant::now();
            let y = self.predict_unchecked(grid, row.insert_axis(Axis(0)))?;
            lat.push(t.elapsed().as_secs_f64());
            out.row_mut(r).assign(&y.row(0));
        }
        Ok((out, lat))
    }

    fn predict_unchecked(&self, grid: &Grid, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.feature_count() {
            return Err(Error::Dimension {
                expected: self.feature_count(),
                actual: z.ncols(),
            });
        }
        match &self.payload {
            Payload::Lse => {
                let lmm = build_measurement_model(&grid.model, &grid.admittance, &self.placement)?;
                let rows = par::try_map_indexed(Execution::Sequential, z.nrows(), |r| {
                    let ph = features_to_phasors(&z.row(r).to_vec());
                    let st = estimate_states(&lmm, &ph)?;
                    Ok::<_, Error>(FlowInjection::evaluate(&st, &grid.model)?.stacked())
                })?;
                Ok(stack_rows(rows, grid.target_count()))
            }
            Payload::Lr { inputs, coefficients } => Ok(linear::apply(inputs, coefficients, z)),
            Payload::Direct { inputs, outputs, net } => {
                let u = net.forward(inputs.transform(z).view())?;
                Ok(outputs.inverse(u.view()))
            }
            Payload::Indirect { inputs, states, net } => {
                let s = states.inverse(net.forward(inputs.transform(z).view())?.view());
                let nb = grid.bus_count();
                let rows = (0..s.nrows())
                    .map(|r| {
                        let st = BusState {
                            v_mag: s.slice(s![r, ..nb]).to_vec(),
                            v_ang: s.slice(s![r, nb..]).to_vec(),
                        };
                        Ok(FlowInjection::evaluate(&st, &grid.model)?.stacked())
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(stack_rows(rows, grid.target_count()))
            }
            Payload::Pic {
                inputs,
                flows,
                bins,
                nets,
            } => {
                let u = crate::nn::forward_all(nets, inputs.transform(z).view(), Execution::Sequential)?;
                let f = flows.inverse(bins.to_flow_order(u.view()).view());
                Ok(pic::lift(&grid.conversion, f.view()))
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("estimators serialize")
    }

    pub fn from_json(text: &str) -> Result<TrainedEstimator> {
        serde_json::from_str(text).map_err(|e| Error::format("<estimator>", e))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<TrainedEstimator> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e))
    }
}

fn stack_rows(rows: Vec<Vec<f64>>, width: usize) -> Array2<f64> {
    let n = rows.len();
    Array2::from_shape_vec((n, width), rows.into_iter().flatten().collect()).expect("uniform rows")
}

/// Largest `|injections − A·flows|` (MW) over the rows of a prediction.
pub fn conservation_gap(grid: &Grid, y: ArrayView2<f64>) -> f64 {
    let mb = grid.flow_count();
    let inj = y.slice(s![.., ..mb]).dot(&pic::a_transpose(&grid.conversion));
    (&inj - &y.slice(s![.., mb..])).iter().fold(0.0, |m, d| m.max(d.abs()))
}
