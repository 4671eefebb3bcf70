//! Fully connected ReLU network with hand-written backpropagation, Adam and
//! a mini-batch training loop over any differentiable objective.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::rng;

/// Hidden layers use ReLU, the output layer is affine. `weights[l]` is
/// `layer_dims[l] × layer_dims[l + 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpNetwork {
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Parameter-shaped gradient (or moment) buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Layer inputs saved by [`MlpNetwork::forward_cached`]; entry `l` feeds layer `l`.
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
}

/// He-normal weights (std `√(2/fan_in)`), zero biases.
pub fn init_network(layer_dims: &[usize], seed: u64) -> Result<MlpNetwork> {
    if layer_dims.len() < 2 || layer_dims.contains(&0) {
        return Err(Error::InvalidParameter(format!(
            "layer dims must list at least input and output, all >= 1; got {layer_dims:?}"
        )));
    }
    let mut r = rng::seeded(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in layer_dims.windows(2) {
        let normal = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).expect("finite std");
        weights.push(Array2::from_shape_simple_fn((w[0], w[1]), || normal.sample(&mut r)));
        biases.push(Array1::zeros(w[1]));
    }
    Ok(MlpNetwork {
        layer_dims: layer_dims.to_vec(),
        weights,
        biases,
    })
}

impl MlpNetwork {
    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated")
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let last = self.weights.len() - 1;
        let mut a = affine(x, &self.weights[0], &self.biases[0]);
        for l in 1..=last {
            a.mapv_inplace(relu);
            a = affine(a.view(), &self.weights[l], &self.biases[l]);
        }
        Ok(a)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.weights.len());
        inputs.push(x.to_owned());
        let mut a = affine(x, &self.weights[0], &self.biases[0]);
        for l in 1..self.weights.len() {
            a.mapv_inplace(relu);
            let next = affine(a.view(), &self.weights[l], &self.biases[l]);
            inputs.push(a);
            a = next;
        }
        Ok((a, ForwardCache { inputs }))
    }

    /// Gradients of the scalar whose derivative w.r.t. the output is `grad_out`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: ArrayView2<f64>) -> Result<Gradients> {
        let batch = cache.inputs[0].nrows();
        if grad_out.dim() != (batch, self.output_dim()) {
            return Err(Error::Dimension {
                expected: batch * self.output_dim(),
                actual: grad_out.len(),
            });
        }
        let n = self.weights.len();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        let mut delta = grad_out.to_owned();
        for l in (0..n).rev() {
            let input = &cache.inputs[l];
            gw.push(input.t().dot(&delta));
            gb.push(delta.sum_axis(Axis(0)));
            if l > 0 {
                let mut prev = delta.dot(&self.weights[l].t());
                // ReLU outputs are positive exactly where the pre-activation was.
                Zip::from(&mut prev).and(input).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = prev;
            }
        }
        gw.reverse();
        gb.reverse();
        Ok(Gradients {
            weights: gw,
            biases: gb,
        })
    }

    fn zeros_like(&self) -> Gradients {
        Gradients {
            weights: self.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: self.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn affine(x: ArrayView2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut out = x.dot(w);
    out += b;
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Gradients,
    v: Gradients,
    t: i32,
}

impl AdamState {
    pub fn new(net: &MlpNetwork) -> AdamState {
        AdamState {
            m: net.zeros_like(),
            v: net.zeros_like(),
            t: 0,
        }
    }
}

pub fn adam_step(net: &mut MlpNetwork, grads: &Gradients, state: &mut AdamState, lr: f64, p: AdamParams) {
    state.t += 1;
    let c1 = 1.0 - p.beta1.powi(state.t);
    let c2 = 1.0 - p.beta2.powi(state.t);
    let update = |param: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = p.beta1 * *m + (1.0 - p.beta1) * g;
        *v = p.beta2 * *v + (1.0 - p.beta2) * g * g;
        *param -= lr * (*m / c1) / ((*v / c2).sqrt() + p.epsilon);
    };
    for l in 0..net.weights.len() {
        Zip::from(&mut net.weights[l])
            .and(&grads.weights[l])
            .and(&mut state.m.weights[l])
            .and(&mut state.v.weights[l])
            .for_each(|w, &g, m, v| update(w, g, m, v));
        Zip::from(&mut net.biases[l])
            .and(&grads.biases[l])
            .and(&mut state.m.biases[l])
            .and(&mut state.v.biases[l])
            .for_each(|b, &g, m, v| update(b, g, m, v));
    }
}

/// Column-wise z-scoring fitted on training rows. Zero-variance columns keep
/// std 1 and are flagged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Array1<f64>,
    pub stds: Array1<f64>,
    pub constant: Vec<bool>,
}

impl Scaler {
    pub fn fit(data: ArrayView2<f64>) -> Result<Scaler> {
        if data.nrows() == 0 {
            return Err(Error::InvalidParameter("cannot fit a scaler on zero rows".into()));
        }
        let means = data.mean_axis(Axis(0)).expect("nonempty");
        let raw = data.std_axis(Axis(0), 0.0);
        let constant: Vec<bool> = raw.iter().map(|&s| !(s > 1e-12 * (1.0 + s.abs()))).collect();
        let stds = Array1::from_iter(raw.iter().zip(&constant).map(|(&s, &c)| if c { 1.0 } else { s }));
        Ok(Scaler { means, stds, constant })
    }

    pub fn identity(width: usize) -> Scaler {
        Scaler {
            means: Array1::zeros(width),
            stds: Array1::ones(width),
            constant: vec![false; width],
        }
    }

    pub fn width(&self) -> usize {
        self.means.len()
    }

    pub fn transform(&self, data: ArrayView2<f64>) -> Array2<f64> {
        (&data - &self.means) / &self.stds
    }

    pub fn inverse(&self, data: ArrayView2<f64>) -> Array2<f64> {
        &data * &self.stds + &self.means
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_layers: usize,
    /// Hidden width as a multiple of the input feature count.
    pub width_factor: f64,
    /// Seeds weight initialization.
    pub seed: u64,
    /// Seeds the per-epoch mini-batch order.
    pub shuffle_seed: u64,
    /// Redraw input noise every epoch instead of reusing one draw.
    pub fresh_noise: bool,
    pub adam: AdamParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 64,
            hidden_layers: 3,
            width_factor: 2.0,
            seed: 0,
            shuffle_seed: 0,
            fresh_noise: true,
            adam: AdamParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.batch_size > 0
            && self.width_factor > 0.0
            && self.adam.epsilon > 0.0
            && (0.0..1.0).contains(&self.adam.beta1)
            && (0.0..1.0).contains(&self.adam.beta2);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid training config {self:?}")))
        }
    }

    /// `[inputs, h, …, h, outputs]` with `h = round(inputs · width_factor)`.
    pub fn layer_dims(&self, inputs: usize, outputs: usize) -> Vec<usize> {
        let h = ((inputs as f64 * self.width_factor).round() as usize).max(1);
        let mut dims = vec![inputs];
        dims.extend(std::iter::repeat(h).take(self.hidden_layers));
        dims.push(outputs);
        dims
    }
}

/// Scalar loss over a batch of (concatenated) network outputs.
pub trait Objective: Sync {
    fn loss(&self, out: ArrayView2<f64>, target: ArrayView2<f64>) -> f64;
    /// Loss and its gradient with respect to `out`.
    fn loss_grad(&self, out: ArrayView2<f64>, target: ArrayView2<f64>) -> (f64, Array2<f64>);
}

/// Mean squared error over all batch elements of `offset + scale ⊙ out − target`.
#[derive(Clone, Debug)]
pub struct ScaledMse {
    pub offset: Array1<f64>,
    pub scale: Array1<f64>,
}

impl ScaledMse {
    pub fn plain(width: usize) -> ScaledMse {
        ScaledMse {
            offset: Array1::zeros(width),
            scale: Array1::ones(width),
        }
    }

    fn residual(&self, out: ArrayView2<f64>, target: ArrayView2<f64>) -> Array2<f64> {
        &out * &self.scale + &self.offset - target
    }
}

impl Objective for ScaledMse {
    fn loss(&self, out: ArrayView2<f64>, target: ArrayView2<f64>) -> f64 {
        self.residual(out, target).mapv(|r| r * r).mean().unwrap_or(0.0)
    }

    fn loss_grad(&self, out: ArrayView2<f64>, target: ArrayView2<f64>) -> (f64, Array2<f64>) {
        let r = self.residual(out, target);
        let loss = r.mapv(|x| x * x).mean().unwrap_or(0.0);
        let k = 2.0 / r.len() as f64;
        let grad = r * &self.scale * k;
        (loss, grad)
    }
}

/// Produces the training inputs for a given epoch (1-based).
pub type EpochInputs<'a> = &'a (dyn Fn(usize) -> Array2<f64> + Sync);

/// Standardized inputs and objective-specific targets for both splits.
pub struct TrainData<'a> {
    pub x_train: ArrayView2<'a, f64>,
    pub t_train: ArrayView2<'a, f64>,
    pub x_val: ArrayView2<'a, f64>,
    pub t_val: ArrayView2<'a, f64>,
    /// When set, replaces `x_train` from epoch 2 on (e.g. fresh noise draws).
    pub refresh: Option<EpochInputs<'a>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub initial_val_loss: f64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
}

/// Outputs of all `nets` on `x`, concatenated column-wise in net order.
pub fn forward_all(nets: &[MlpNetwork], x: ArrayView2<f64>, exec: Execution) -> Result<Array2<f64>> {
    let outs = par::try_map_indexed(exec, nets.len(), |i| nets[i].forward(x))?;
    let views: Vec<ArrayView2<f64>> = outs.iter().map(|o| o.view()).collect();
    Ok(concatenate(Axis(1), &views).expect("row counts agree"))
}

/// Trains `nets` jointly on one objective over their concatenated outputs.
///
/// Each epoch visits the training rows in a seeded shuffled order. After
/// every epoch the validation loss is measured and the parameters with the
/// lowest validation loss (including the initial ones) are written back.
pub fn train(
    nets: &mut [MlpNetwork],
    data: &TrainData,
    objective: &dyn Objective,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<TrainHistory> {
    cfg.validate()?;
    let n = data.x_train.nrows();
    if n == 0 || data.x_val.nrows() == 0 {
        return Err(Error::InvalidParameter(
            "training and validation splits must be nonempty".into(),
        ));
    }
    if nets.is_empty() {
        return Err(Error::InvalidParameter("no networks to train".into()));
    }
    let out_dim: usize = nets.iter().map(MlpNetwork::output_dim).sum();
    if data.t_train.nrows() != n || data.t_val.nrows() != data.x_val.nrows() {
        return Err(Error::Dimension {
            expected: n,
            actual: data.t_train.nrows(),
        });
    }
    let mut offsets = vec![0];
    for net in nets.iter() {
        offsets.push(offsets.last().unwrap() + net.output_dim());
    }
    let val_loss = |nets: &[MlpNetwork]| -> Result<f64> {
        let out = forward_all(nets, data.x_val, exec)?;
        debug_assert_eq!(out.ncols(), out_dim);
        Ok(objective.loss(out.view(), data.t_val))
    };
    let initial_val_loss = val_loss(nets)?;
    let mut best = nets.to_vec();
    let mut best_val = initial_val_loss;
    let mut best_epoch = 0;
    let mut states: Vec<AdamState> = nets.iter().map(AdamState::new).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let batch = cfg.batch_size.min(n);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut refreshed: Option<Array2<f64>> = None;
    for epoch in 1..=cfg.epochs {
        if let (Some(f), true) = (data.refresh, epoch > 1) {
            let x = f(epoch);
            if x.dim() != data.x_train.dim() {
                return Err(Error::Dimension {
                    expected: data.x_train.len(),
                    actual: x.len(),
                });
            }
            refreshed = Some(x);
        }
        let x_train = refreshed.as_ref().map_or(data.x_train, |x| x.view());
        order.shuffle(&mut rng::stream(cfg.shuffle_seed, &[epoch as u64]));
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for idx in order.chunks(batch) {
            let xb = x_train.select(Axis(0), idx);
            let tb = data.t_train.select(Axis(0), idx);
            let fwd = par::try_map_indexed(exec, nets.len(), |i| nets[i].forward_cached(xb.view()))?;
            let views: Vec<ArrayView2<f64>> = fwd.iter().map(|(o, _)| o.view()).collect();
            let out = concatenate(Axis(1), &views).expect("row counts agree");
            let (loss, grad) = objective.loss_grad(out.view(), tb.view());
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let grads = par::try_map_indexed(exec, nets.len(), |i| {
                nets[i].backward(&fwd[i].1, grad.slice(s![.., offsets[i]..offsets[i + 1]]))
            })?;
            for ((net, g), st) in nets.iter_mut().zip(&grads).zip(&mut states) {
                adam_step(net, g, st, cfg.learning_rate, cfg.adam);
            }
            loss_sum += loss;
            batches += 1;
        }
        let vl = val_loss(nets)?;
        if !vl.is_finite() || nets.iter().any(|n| !n.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        let tl = loss_sum / batches as f64;
        log::debug!("epoch {epoch}: train {tl:.6e} val {vl:.6e}");
        history.push(EpochRecord {
            epoch,
            train_loss: tl,
            val_loss: vl,
        });
        if vl < best_val {
            best_val = vl;
            best_epoch = epoch;
            best.clone_from_slice(nets);
        }
    }
    nets.clone_from_slice(&best);
    Ok(TrainHistory {
        initial_val_loss,
        best_epoch,
        best_val_loss: best_val,
        epochs: history,
    })
}

/// Flattened parameter view, used by the gradient checks.
pub fn flatten_gradients(g: &Gradients) -> Vec<f64> {
    let mut v = Vec::new();
    for (w, b) in g.weights.iter().zip(&g.biases) {
        v.extend(w.iter());
        v.extend(b.iter());
    }
    v
}

/// Mutable access to parameter `k` in [`flatten_gradients`] order.
pub fn parameter_mut(net: &mut MlpNetwork, mut k: usize) -> &mut f64 {
    for l in 0..net.weights.len() {
        let nw = net.weights[l].len();
        if k < nw {
            return net.weights[l].iter_mut().nth(k).expect("in range");
        }
        k -= nw;
        let nb = net.biases[l].len();
        if k < nb {
            return &mut net.biases[l][k];
        }
        k -= nb;
    }
    panic!("parameter index out of range")
}

/// Convenience for a single row.
pub fn predict_row(net: &MlpNetwork, x: ArrayView1<f64>) -> Result<Array1<f64>> {
    let out = net.forward(x.insert_axis(Axis(0)))?;
    Ok(out.row(0).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::seeded(seed);
        Array2::from_shape_simple_fn((rows, cols), || r.random_range(-1.0..1.0))
    }

    #[test]
    fn init_shapes_and_determinism() {
        let a = init_network(&[2, 2], 1).unwrap();
        assert_eq!(a.weights[0].dim(), (2, 2));
        assert_eq!(a.biases[0].len(), 2);
        assert_eq!(a, init_network(&[2, 2], 1).unwrap());
        assert_ne!(a, init_network(&[2, 2], 2).unwrap());
        assert!(init_network(&[3], 0).is_err());
        assert!(init_network(&[3, 0, 1], 0).is_err());
    }

    #[test]
    fn init_std_follows_fan_in() {
        let net = init_network(&[1000, 1000], 9).unwrap();
        let std = net.weights[0].std(0.0);
        let target = (2.0f64 / 1000.0).sqrt();
        assert!((std / target - 1.0).abs() < 0.05, "{std} vs {target}");
    }

    #[test]
    fn forward_special_cases() {
        let mut net = init_network(&[3, 4, 2], 0).unwrap();
        for w in &mut net.weights {
            w.fill(0.0);
        }
        net.biases[1] = array![1.5, -2.0];
        let out = net.forward(random_matrix(5, 3, 1).view()).unwrap();
        assert!(out.rows().into_iter().all(|r| r == array![1.5, -2.0]));

        let mut id = init_network(&[3, 3], 0).unwrap();
        id.weights[0] = Array2::eye(3);
        let x = random_matrix(4, 3, 2);
        assert_eq!(id.forward(x.view()).unwrap(), x);
        assert!(id.forward(random_matrix(4, 2, 2).view()).is_err());
    }

    #[test]
    fn forward_matches_hand_computation() {
        let net = MlpNetwork {
            layer_dims: vec![2, 3, 1],
            weights: vec![array![[1.0, -1.0, 0.5], [2.0, 0.0, -1.0]], array![[1.0], [2.0], [-3.0]]],
            biases: vec![array![0.0, 0.5, 0.0], array![0.25]],
        };
        // h = relu([1+4, -1+0.5, 0.5-2]) = [5, 0, 0]; out = 5 + 0.25
        let out = net.forward(array![[1.0, 2.0]].view()).unwrap();
        assert_eq!(out, array![[5.25]]);
    }

    fn finite_difference_error(dims: &[usize], seed: u64) -> f64 {
        let net = init_network(dims, seed).unwrap();
        let x = random_matrix(6, dims[0], seed + 1);
        let r = random_matrix(6, *dims.last().unwrap(), seed + 2);
        let scalar = |n: &MlpNetwork| (n.forward(x.view()).unwrap() * &r).sum();
        let (_, cache) = net.forward_cached(x.view()).unwrap();
        let analytic = flatten_gradients(&net.backward(&cache, r.view()).unwrap());
        let h = 1e-5;
        let mut worst = 0.0f64;
        for (k, &a) in analytic.iter().enumerate() {
            let mut p = net.clone();
            *parameter_mut(&mut p, k) += h;
            let mut m = net.clone();
            *parameter_mut(&mut m, k) -= h;
            let fd = (scalar(&p) - scalar(&m)) / (2.0 * h);
            let denom = a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max((a - fd).abs() / denom);
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        assert!(finite_difference_error(&[10, 8, 5], 3) < 1e-5);
        assert!(finite_difference_error(&[4, 6, 6, 6, 3], 4) < 1e-5);
    }

    #[test]
    fn zero_upstream_gradient() {
        let net = init_network(&[3, 4, 2], 5).unwrap();
        let x = random_matrix(3, 3, 6);
        let (_, cache) = net.forward_cached(x.view()).unwrap();
        let g = net.backward(&cache, Array2::zeros((3, 2)).view()).unwrap();
        assert!(flatten_gradients(&g).iter().all(|&v| v == 0.0));
        assert!(net.backward(&cache, Array2::zeros((2, 2)).view()).is_err());
    }

    #[test]
    fn linear_mse_gradient_closed_form() {
        let mut net = init_network(&[3, 2], 7).unwrap();
        net.biases[0].fill(0.0);
        let x = random_matrix(8, 3, 8);
        let y = random_matrix(8, 2, 9);
        let (out, cache) = net.forward_cached(x.view()).unwrap();
        // per-sample squared error summed over outputs, averaged over the batch
        let grad_out = (&out - &y) * (2.0 / 8.0);
        let g = net.backward(&cache, grad_out.view()).unwrap();
        let expect = x.t().dot(&(x.dot(&net.weights[0]) - &y)) * (2.0 / 8.0);
        assert!((&g.weights[0] - &expect).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let mut net = init_network(&[2, 2], 1).unwrap();
        let before = net.clone();
        let mut st = AdamState::new(&net);
        let mut g = net.zeros_like();
        g.weights[0] = array![[0.5, -2.0], [1e-3, 0.0]];
        adam_step(&mut net, &g, &mut st, 1e-3, AdamParams::default());
        for ((a, b), gv) in net.weights[0]
            .iter()
            .zip(before.weights[0].iter())
            .zip(g.weights[0].iter())
        {
            let expect = -1e-3 * gv / (gv.abs() + 1e-8);
            assert!((a - b - expect).abs() < 1e-15);
        }

        let mut still = before.clone();
        let mut st = AdamState::new(&still);
        for _ in 0..50 {
            adam_step(&mut still, &before.zeros_like(), &mut st, 1e-3, AdamParams::default());
        }
        assert_eq!(still, before);
    }

    #[test]
    fn scaler_round_trip_and_constant_columns() {
        let mut d = random_matrix(50, 3, 4) * 100.0;
        d.column_mut(1).fill(7.0);
        let s = Scaler::fit(d.view()).unwrap();
        assert_eq!(s.constant, vec![false, true, false]);
        assert_eq!(s.stds[1], 1.0);
        let back = s.inverse(s.transform(d.view()).view());
        assert!((&back - &d).iter().all(|x| x.abs() < 1e-10));
    }

    fn line_data(n: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let x = random_matrix(n, 1, seed);
        let y = x.mapv(|v| 2.0 * v + 1.0);
        (x, y)
    }

    #[test]
    fn learns_a_line() {
        let (x, y) = line_data(1000, 1);
        let (xv, yv) = line_data(200, 2);
        let sx = Scaler::fit(x.view()).unwrap();
        let sy = Scaler::fit(y.view()).unwrap();
        let (x, xv) = (sx.transform(x.view()), sx.transform(xv.view()));
        // one input feature would give width-2 hidden layers under the default factor
        let cfg = TrainConfig {
            seed: 3,
            epochs: 200,
            width_factor: 16.0,
            ..Default::default()
        };
        let mut nets = vec![init_network(&cfg.layer_dims(1, 1), 4).unwrap()];
        let data = TrainData {
            x_train: x.view(),
            t_train: y.view(),
            x_val: xv.view(),
            t_val: yv.view(),
            refresh: None,
        };
        let objective = ScaledMse {
            offset: sy.means.clone(),
            scale: sy.stds.clone(),
        };
        let h = train(&mut nets, &data, &objective, &cfg, Execution::Sequential).unwrap();
        assert!(h.best_val_loss < 1e-3, "val mse {}", h.best_val_loss);
        assert!(h.best_val_loss <= h.initial_val_loss);
        assert!(h.epochs.iter().all(|e| e.train_loss.is_finite()));
        let again = {
            let mut n2 = vec![init_network(&cfg.layer_dims(1, 1), 4).unwrap()];
            train(&mut n2, &data, &objective, &cfg, Execution::Parallel).unwrap()
        };
        assert_eq!(h, again);
    }

    #[test]
    fn zero_epochs_returns_initial_net() {
        let (x, y) = line_data(100, 1);
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let init = init_network(&cfg.layer_dims(1, 1), 4).unwrap();
        let mut nets = vec![init.clone()];
        let data = TrainData {
            x_train: x.view(),
            t_train: y.view(),
            x_val: x.view(),
            t_val: y.view(),
            refresh: None,
        };
        let h = train(&mut nets, &data, &ScaledMse::plain(1), &cfg, Execution::Sequential).unwrap();
        assert!(h.epochs.is_empty());
        assert_eq!(nets[0], init);
    }

    #[test]
    fn nan_loss_aborts() {
        let (x, mut y) = line_data(100, 1);
        y[(3, 0)] = f64::NAN;
        let cfg = TrainConfig {
            epochs: 2,
            ..Default::default()
        };
        let mut nets = vec![init_network(&cfg.layer_dims(1, 1), 4).unwrap()];
        let data = TrainData {
            x_train: x.view(),
            t_train: y.view(),
            x_val: x.view(),
            t_val: x.view(),
            refresh: None,
        };
        let err = train(&mut nets, &data, &ScaledMse::plain(1), &cfg, Execution::Sequential).unwrap_err();
        assert!(matches!(err, Error::Diverged { epoch: 1 }));
    }
}
