use nalgebra::DMatrix;
use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::dnn::inputs;
use super::{EstimatorKind, FitContext, Fitted, Payload, TrainedEstimator};
use crate::error::{Error, Result};
use crate::netmodel::ConversionMatrix;
use crate::nn::{init_network, train, Objective, Scaler, TrainConfig, TrainData};
use crate::rng;

/// Flow variables grouped by their training-set spread.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinPartition {
    pub n_bin: usize,
    /// Bin of each flow variable.
    pub assignment: Vec<usize>,
    /// Training standard deviation of each flow variable, MW.
    pub criterion_values: Vec<f64>,
    /// Flow indices of each bin, ascending.
    pub bins: Vec<Vec<usize>>,
}

/// Sorts flows by training std (ties by index) and cuts the order into
/// `n_bin` contiguous groups whose sizes differ by at most one, larger first.
pub fn make_bins(flows: ArrayView2<f64>, n_bin: usize) -> Result<BinPartition> {
    let mb = flows.ncols();
    if n_bin == 0 || n_bin > mb {
        return Err(Error::InvalidParameter(format!(
            "n_bin must be in 1..={mb}, got {n_bin}"
        )));
    }
    let stds = flows.std_axis(Axis(0), 0.0).to_vec();
    let mut order: Vec<usize> = (0..mb).collect();
    order.sort_by(|&a, &b| stds[a].total_cmp(&stds[b]).then(a.cmp(&b)));
    let (q, r) = (mb / n_bin, mb % n_bin);
    let mut bins = Vec::with_capacity(n_bin);
    let mut assignment = vec![0; mb];
    let mut start = 0;
    for j in 0..n_bin {
        let len = q + usize::from(j < r);
        let mut bin = order[start..start + len].to_vec();
        bin.sort_unstable();
        for &f in &bin {
            assignment[f] = j;
        }
        bins.push(bin);
        start += len;
    }
    Ok(BinPartition {
        n_bin,
        assignment,
        criterion_values: stds,
        bins,
    })
}

impl BinPartition {
    /// Flow index of each column of the bin-concatenated output.
    pub fn concat_order(&self) -> Vec<usize> {
        self.bins.iter().flatten().copied().collect()
    }

    /// Reorders bin-concatenated columns into flow-index order.
    pub fn to_flow_order(&self, concat: ArrayView2<f64>) -> Array2<f64> {
        let order = self.concat_order();
        let mut out = Array2::zeros(concat.raw_dim());
        for (c, &f) in order.iter().enumerate() {
            out.column_mut(f).assign(&concat.column(c));
        }
        out
    }
}

fn to_array(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Transpose of `a` as an ndarray, so row batches map with one product.
pub(crate) fn a_transpose(conv: &ConversionMatrix) -> Array2<f64> {
    to_array(&conv.a.transpose())
}

/// `[flows, flows · Aᵀ]` row-wise.
pub(crate) fn lift(conv: &ConversionMatrix, flows: ArrayView2<f64>) -> Array2<f64> {
    let inj = flows.dot(&a_transpose(conv));
    concatenate(Axis(1), &[flows, inj.view()]).expect("row counts agree")
}

/// Mean over batch and components of `[P (y − B f)]²` with `P = (BᵀB)⁻¹Bᵀ`,
/// and its gradient with respect to `flow_pred`.
pub fn pic_loss(
    y_true: ArrayView2<f64>,
    flow_pred: ArrayView2<f64>,
    p: ArrayView2<f64>,
    b: ArrayView2<f64>,
) -> Result<(f64, Array2<f64>)> {
    let (m, mb) = b.dim();
    if y_true.ncols() != m || flow_pred.ncols() != mb || p.dim() != (mb, m) || y_true.nrows() != flow_pred.nrows() {
        return Err(Error::Dimension {
            expected: m,
            actual: y_true.ncols(),
        });
    }
    let resid = &y_true - &flow_pred.dot(&b.t());
    let q = resid.dot(&p.t());
    let loss = q.mapv(|v| v * v).mean().unwrap_or(0.0);
    let k = -2.0 / q.len() as f64;
    let grad = q.dot(&p.dot(&b)) * k;
    Ok((loss, grad))
}

/// PIC loss over bin networks producing standardized flows `u`, with
/// `f = μ + σ ⊙ u` in flow order.
///
/// Targets are the projected labels `P·y`. Because `P·B = I` (checked at
/// construction) the projected residual reduces to `P·y − f`, which avoids an
/// `m_b × m_b` product per batch.
pub struct PicObjective {
    order: Vec<usize>,
    mean: Array1<f64>,
    std: Array1<f64>,
}

impl PicObjective {
    pub fn new(conv: &ConversionMatrix, bins: &BinPartition, flows: &Scaler) -> Result<PicObjective> {
        let pb = conv.pseudo_inverse() * &conv.b;
        let n = pb.nrows();
        let dev = (pb - DMatrix::<f64>::identity(n, n)).amax();
        if dev > 1e-10 {
            return Err(Error::Degenerate(format!("P·B deviates from identity by {dev:e}")));
        }
        let order = bins.concat_order();
        let mean = Array1::from_iter(order.iter().map(|&f| flows.means[f]));
        let std = Array1::from_iter(order.iter().map(|&f| flows.stds[f]));
        Ok(PicObjective { order, mean, std })
    }

    /// Projected targets `P·y` per row, columns permuted to bin-concatenated order.
    pub fn targets(&self, conv: &ConversionMatrix, y: ArrayView2<f64>) -> Array2<f64> {
        let projected = y.dot(&to_array(&conv.pseudo_inverse()).t());
        projected.select(Axis(1), &self.order)
    }

    fn residual(&self, out: ArrayView2<f64>, target: ArrayView2<f64>) -> Array2<f64> {
        &target - &(&out * &self.std + &self.mean)
    }
}

impl Objective for PicObjective {
    fn loss(&self, out: ArrayView2<f64>, target: ArrayView2<f64>) -> f64 {
        self.residual(out, target).mapv(|r| r * r).mean().unwrap_or(0.0)
    }

    fn loss_grad(&self, out: ArrayView2<f64>, target: ArrayView2<f64>) -> (f64, Array2<f64>) {
        let q = self.residual(out, target);
        let loss = q.mapv(|r| r * r).mean().unwrap_or(0.0);
        let k = -2.0 / q.len() as f64;
        (loss, q * &self.std * k)
    }
}

/// One network per bin, each reading the full feature vector, trained
/// jointly on the projected loss. Predictions are `[f; A f]`.
pub fn train_pic_dnn(ctx: FitContext, cfg: &TrainConfig, n_bin: usize) -> Result<Fitted> {
    ctx.check()?;
    let conv = &ctx.grid.conversion;
    let mb = conv.flow_count();
    let split = ctx.dataset.split();
    let flows_train = ctx.dataset.y.slice(s![split.train.clone(), ..mb]);
    let bins = make_bins(flows_train, n_bin)?;
    let flows = Scaler::fit(flows_train)?;
    let objective = PicObjective::new(conv, &bins, &flows)?;
    let x = inputs(&ctx)?;
    let t_train = objective.targets(conv, ctx.dataset.y.slice(s![split.train.clone(), ..]));
    let t_val = objective.targets(conv, ctx.dataset.y.slice(s![split.validation.clone(), ..]));
    let mut nets = bins
        .bins
        .iter()
        .enumerate()
        .map(|(j, bin)| {
            init_network(
                &cfg.layer_dims(x.train.ncols(), bin.len()),
                rng::keyed(cfg.seed, &[j as u64]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let data = TrainData {
        x_train: x.train.view(),
        t_train: t_train.view(),
        x_val: x.val.view(),
        t_val: t_val.view(),
        refresh: None,
    };
    let refresh = |e: usize| x.epoch_features(e);
    let data = TrainData {
        refresh: (cfg.fresh_noise && !ctx.noise.is_identity()).then_some(&refresh as _),
        ..data
    };
    let history = train(&mut nets, &data, &objective, cfg, ctx.exec)?;
    let payload = Payload::Pic {
        inputs: x.scaler,
        flows,
        bins,
        nets,
    };
    Ok(Fitted {
        estimator: TrainedEstimator::new(&ctx, EstimatorKind::Pic, payload),
        history: Some(history),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;
    use rand::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::seeded(seed);
        Array2::from_shape_simple_fn((rows, cols), || r.random_range(-1.0..1.0))
    }

    #[test]
    fn bins_follow_sorted_spread() {
        let one = make_bins(random(20, 6, 1).view(), 1).unwrap();
        assert_eq!(one.bins, vec![vec![0, 1, 2, 3, 4, 5]]);

        // column stds proportional to (1, 10, 2, 20)
        let base = random(50, 1, 2);
        let scales = array![1.0, 10.0, 2.0, 20.0];
        let flows = Array2::from_shape_fn((50, 4), |(i, j)| base[(i, 0)] * scales[j]);
        let b = make_bins(flows.view(), 2).unwrap();
        assert_eq!(b.bins, vec![vec![0, 2], vec![1, 3]]);
        assert_eq!(b.assignment, vec![0, 1, 0, 1]);

        let big = make_bins(random(30, 372, 3).view(), 5).unwrap();
        let sizes: Vec<usize> = big.bins.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![75, 75, 74, 74, 74]);
        let mut all = big.concat_order();
        all.sort_unstable();
        assert_eq!(all, (0..372).collect::<Vec<_>>());
        assert!(make_bins(random(5, 3, 1).view(), 4).is_err());
        assert!(make_bins(random(5, 3, 1).view(), 0).is_err());
    }

    #[test]
    fn bin_order_round_trips() {
        let b = make_bins(random(40, 7, 5).view(), 3).unwrap();
        let flows = random(4, 7, 6);
        let concat = flows.select(Axis(1), &b.concat_order());
        assert_eq!(b.to_flow_order(concat.view()), flows);
    }

    /// Toy 4-flow, 3-bus conversion: two branches 0-1 and 1-2.
    fn toy_b() -> (Array2<f64>, Array2<f64>) {
        let a = array![[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
        let b = concatenate(Axis(0), &[Array2::eye(4).view(), a.view()]).unwrap();
        let bm = DMatrix::from_fn(7, 4, |i, j| b[(i, j)]);
        let p = (bm.transpose() * &bm).cholesky().unwrap().solve(&bm.transpose());
        (b, to_array(&p))
    }

    #[test]
    fn projected_loss_identities() {
        let (b, p) = toy_b();
        assert!((p.dot(&b) - Array2::<f64>::eye(4)).iter().all(|d| d.abs() < 1e-12));
        let y = random(5, 7, 7) * 50.0;
        let f = random(5, 4, 8) * 50.0;
        let (loss, _) = pic_loss(y.view(), f.view(), p.view(), b.view()).unwrap();
        let alt = (&y.dot(&p.t()) - &f).mapv(|v| v * v).mean().unwrap();
        assert!((loss - alt).abs() < 1e-10 * alt.max(1.0));

        let f_true = random(5, 4, 9) * 50.0;
        let consistent = f_true.dot(&b.t());
        let (l2, _) = pic_loss(consistent.view(), f.view(), p.view(), b.view()).unwrap();
        let mse = (&f - &f_true).mapv(|v| v * v).mean().unwrap();
        assert!((l2 - mse).abs() < 1e-9 * mse);
        let (l0, g0) = pic_loss(consistent.view(), f_true.view(), p.view(), b.view()).unwrap();
        assert!(l0 < 1e-20 && g0.iter().all(|g| g.abs() < 1e-10));
    }

    #[test]
    fn pic_gradient_matches_finite_differences() {
        let (b, p) = toy_b();
        let y = random(3, 7, 10) * 5.0;
        let f = random(3, 4, 11) * 5.0;
        let (_, g) = pic_loss(y.view(), f.view(), p.view(), b.view()).unwrap();
        let h = 1e-5;
        for i in 0..3 {
            for j in 0..4 {
                let mut fp = f.clone();
                fp[(i, j)] += h;
                let mut fm = f.clone();
                fm[(i, j)] -= h;
                let lp = pic_loss(y.view(), fp.view(), p.view(), b.view()).unwrap().0;
                let lm = pic_loss(y.view(), fm.view(), p.view(), b.view()).unwrap().0;
                let fd = (lp - lm) / (2.0 * h);
                assert!(
                    (fd - g[(i, j)]).abs() <= 1e-6 * g[(i, j)].abs().max(1e-3),
                    "{fd} vs {}",
                    g[(i, j)]
                );
            }
        }
    }

    #[test]
    fn one_bin_matches_flow_mse_on_projected_targets() {
        use crate::measurement::{GmmNoiseModel, PmuPlacement};
        use crate::netmodel::{read_case, BusId};
        use crate::nn::ScaledMse;
        use crate::par::Execution;
        use crate::scenario::{build_dataset, generate_scenarios, DatasetSizes, ScenarioParams};
        use crate::Grid;

        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/case9.m");
        let grid = Grid::new(read_case(path).unwrap()).unwrap();
        let placement = PmuPlacement::new(&grid.model, &[BusId(4), BusId(8)]).unwrap();
        let sizes = DatasetSizes {
            train: 120,
            validation: 30,
            test: 10,
        };
        let sc = generate_scenarios(&grid.model, 170, ScenarioParams::default(), 4).unwrap();
        let ds = build_dataset(&grid, &sc, &placement, sizes, 4, Execution::Sequential).unwrap();
        let noise = GmmNoiseModel::field_mixture(9);
        let ctx = FitContext {
            grid: &grid,
            dataset: &ds,
            noise: &noise,
            exec: Execution::Sequential,
        };
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 16,
            seed: 21,
            shuffle_seed: 22,
            ..TrainConfig::default()
        };
        let pic = train_pic_dnn(ctx, &cfg, 1).unwrap();
        let Payload::Pic { nets, bins, .. } = &pic.estimator.payload else {
            panic!("not a PIC payload")
        };
        assert_eq!(bins.concat_order(), (0..grid.flow_count()).collect::<Vec<_>>());

        // the same run by hand: flow-only MSE against P·y
        let conv = &grid.conversion;
        let split = ds.split();
        let mb = conv.flow_count();
        let flows = Scaler::fit(ds.y.slice(s![split.train.clone(), ..mb])).unwrap();
        let p = to_array(&conv.pseudo_inverse());
        let t_train = ds.y.slice(s![split.train.clone(), ..]).dot(&p.t());
        let t_val = ds.y.slice(s![split.validation.clone(), ..]).dot(&p.t());
        let x = inputs(&ctx).unwrap();
        let mut manual = vec![init_network(&cfg.layer_dims(x.train.ncols(), mb), rng::keyed(cfg.seed, &[0])).unwrap()];
        let refresh = |e: usize| x.epoch_features(e);
        let data = TrainData {
            x_train: x.train.view(),
            t_train: t_train.view(),
            x_val: x.val.view(),
            t_val: t_val.view(),
            refresh: Some(&refresh),
        };
        let mse = ScaledMse {
            offset: flows.means.clone(),
            scale: flows.stds.clone(),
        };
        let history = train(&mut manual, &data, &mse, &cfg, Execution::Sequential).unwrap();
        let pic_history = pic.history.unwrap();
        assert_eq!(history.best_epoch, pic_history.best_epoch);
        assert!((history.best_val_loss - pic_history.best_val_loss).abs() <= 1e-10);
        let diff = nets[0]
            .weights
            .iter()
            .zip(&manual[0].weights)
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0f64, f64::max);
        assert!(diff <= 1e-10, "weights differ by {diff:e}");
    }
}
