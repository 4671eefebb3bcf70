use ndarray::{s, Array2};

use super::{EstimatorKind, FitContext, Fitted, Payload, TrainedEstimator};
use crate::error::Result;
use crate::nn::{init_network, train, MlpNetwork, ScaledMse, Scaler, TrainConfig, TrainData, TrainHistory};
use crate::rng;

/// Standardized noisy features for the training and validation splits.
pub(crate) struct Inputs<'a> {
    pub scaler: Scaler,
    pub train: Array2<f64>,
    pub val: Array2<f64>,
    ctx: FitContext<'a>,
}

pub(crate) fn inputs<'a>(ctx: &FitContext<'a>) -> Result<Inputs<'a>> {
    let split = ctx.dataset.split();
    let raw_train = ctx.features(split.train.clone());
    let scaler = Scaler::fit(raw_train.view())?;
    let train = scaler.transform(raw_train.view());
    let val = scaler.transform(ctx.features(split.validation.clone()).view());
    Ok(Inputs {
        scaler,
        train,
        val,
        ctx: *ctx,
    })
}

impl Inputs<'_> {
    /// Training features with a fresh noise draw for `epoch`, standardized
    /// with the first draw's statistics.
    pub fn epoch_features(&self, epoch: usize) -> Array2<f64> {
        let noise = self
            .ctx
            .noise
            .with_seed(rng::keyed(self.ctx.noise.seed, &[epoch as u64]));
        let ctx = FitContext {
            noise: &noise,
            ..self.ctx
        };
        self.scaler
            .transform(ctx.features(ctx.dataset.split().train.clone()).view())
    }
}

/// One network from features to `targets`, trained on standardized targets.
fn regress(
    ctx: &FitContext,
    cfg: &TrainConfig,
    x: &Inputs,
    targets: &Array2<f64>,
) -> Result<(Scaler, MlpNetwork, TrainHistory)> {
    let split = ctx.dataset.split();
    let t_train = targets.slice(s![split.train.clone(), ..]);
    let scaler = Scaler::fit(t_train)?;
    let tt = scaler.transform(t_train);
    let tv = scaler.transform(targets.slice(s![split.validation.clone(), ..]));
    let dims = cfg.layer_dims(x.train.ncols(), targets.ncols());
    let mut nets = vec![init_network(&dims, rng::keyed(cfg.seed, &[0]))?];
    let data = TrainData {
        x_train: x.train.view(),
        t_train: tt.view(),
        x_val: x.val.view(),
        t_val: tv.view(),
        refresh: None,
    };
    let refresh = |e: usize| x.epoch_features(e);
    let data = TrainData {
        refresh: (cfg.fresh_noise && !ctx.noise.is_identity()).then_some(&refresh as _),
        ..data
    };
    let history = train(&mut nets, &data, &ScaledMse::plain(targets.ncols()), cfg, ctx.exec)?;
    Ok((scaler, nets.pop().expect("one net"), history))
}

/// Features straight to all flows and injections, plain MSE on standardized targets.
pub fn train_direct_dnn(ctx: FitContext, cfg: &TrainConfig) -> Result<Fitted> {
    ctx.check()?;
    let x = inputs(&ctx)?;
    let (outputs, net, history) = regress(&ctx, cfg, &x, &ctx.dataset.y)?;
    let payload = Payload::Direct {
        inputs: x.scaler,
        outputs,
        net,
    };
    Ok(Fitted {
        estimator: TrainedEstimator::new(&ctx, EstimatorKind::Direct, payload),
        history: Some(history),
    })
}

/// Features to bus states (magnitudes, slack-referenced angles); flows and
/// injections are then evaluated from the predicted state.
pub fn train_indirect_dnn(ctx: FitContext, cfg: &TrainConfig) -> Result<Fitted> {
    ctx.check()?;
    let x = inputs(&ctx)?;
    let (states, net, history) = regress(&ctx, cfg, &x, &ctx.dataset.states)?;
    let payload = Payload::Indirect {
        inputs: x.scaler,
        states,
        net,
    };
    Ok(Fitted {
        estimator: TrainedEstimator::new(&ctx, EstimatorKind::Indirect, payload),
        history: Some(history),
    })
}
