use candle_core::{DType, Tensor};

use super::schedule::{q_sample, NoiseSchedule};
use super::NoisePredictor;
use crate::error::{Error, Result};
use crate::text::{CondBatch, ConditionBundle};

/// Mean squared error between `eps` and the model's noise prediction at `x_t`.
pub fn training_loss<M: NoisePredictor + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    x0: &Tensor,
    cond: &CondBatch,
    t: &[usize],
    eps: &Tensor,
) -> Result<Tensor> {
    let x_t = q_sample(schedule, x0, t, eps)?;
    let pred = model.predict_noise(&x_t, t, cond)?;
    if pred.dims() != eps.dims() {
        return Err(Error::Shape(format!("prediction {:?} vs noise {:?}", pred.dims(), eps.dims())));
    }
    let loss = (pred - eps)?.sqr()?.mean_all()?;
    let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if !value.is_finite() {
        let xt_norm = x_t.to_dtype(DType::F64)?.sqr()?.sum_all()?.sqrt()?.to_scalar::<f64>()?;
        return Err(Error::Training {
            t: t.first().copied().unwrap_or(0),
            xt_norm,
        });
    }
    Ok(loss)
}

/// Fuses each bundle at its own `t` (or the null row where `cfg_drop`) and
/// evaluates [`training_loss`].
pub fn training_loss_bundles<M: NoisePredictor + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    x0: &Tensor,
    bundles: &[ConditionBundle],
    t: &[usize],
    eps: &Tensor,
    cfg_drop: &[bool],
) -> Result<Tensor> {
    let cond = CondBatch::from_bundles(bundles, t, cfg_drop, schedule.len())?;
    training_loss(model, schedule, x0, &cond, t, eps)
}
