use nalgebra::DMatrix;
use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use super::{EstimatorKind, FitContext, Payload, TrainedEstimator};
use crate::error::{Error, Result};
use crate::nn::Scaler;

const RIDGE: f64 = 1e-8;

/// Least squares with intercept on z-scored features, lightly ridge-damped.
pub fn train_lr(ctx: FitContext) -> Result<TrainedEstimator> {
    ctx.check()?;
    let train = ctx.dataset.split().train.clone();
    let x = ctx.features(train.clone());
    let y = ctx.dataset.y.slice(s![train, ..]);
    let (inputs, coefficients) = fit_linear(x.view(), y)?;
    Ok(TrainedEstimator::new(
        &ctx,
        EstimatorKind::Lr,
        Payload::Lr { inputs, coefficients },
    ))
}

pub(crate) fn fit_linear(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<(Scaler, Array2<f64>)> {
    if x.nrows() != y.nrows() || x.nrows() == 0 {
        return Err(Error::Degenerate(format!(
            "{} feature rows vs {} target rows",
            x.nrows(),
            y.nrows()
        )));
    }
    let scaler = Scaler::fit(x)?;
    let design = with_ones(scaler.transform(x).view());
    let k = design.ncols();
    let mut gram = to_dmatrix(design.t().dot(&design).view());
    for i in 0..k {
        gram[(i, i)] += RIDGE;
    }
    let rhs = to_dmatrix(design.t().dot(&y).view());
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Degenerate("normal matrix is not positive definite".into()))?;
    let w = chol.solve(&rhs);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite regression coefficients".into()));
    }
    let coef = Array2::from_shape_fn((w.nrows(), w.ncols()), |(i, j)| w[(i, j)]);
    Ok((scaler, coef))
}

pub(crate) fn apply(inputs: &Scaler, coef: &Array2<f64>, z: ArrayView2<f64>) -> Array2<f64> {
    with_ones(inputs.transform(z).view()).dot(coef)
}

fn with_ones(x: ArrayView2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[x, Array2::ones((x.nrows(), 1)).view()]).expect("row counts agree")
}

fn to_dmatrix(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}
