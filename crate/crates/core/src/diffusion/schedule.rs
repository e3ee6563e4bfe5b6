use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 2e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    #[default]
    Linear,
}

/// Variance schedule indexed by `t ∈ [0, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

pub fn make_schedule(num_timesteps: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if num_timesteps < 1 {
        return Err(Error::Config("schedule needs T >= 1".into()));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => {
            if num_timesteps == 1 {
                vec![BETA_START]
            } else {
                let step = (BETA_END - BETA_START) / (num_timesteps - 1) as f64;
                (0..num_timesteps).map(|i| BETA_START + step * i as f64).collect()
            }
        }
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(num_timesteps);
    let mut acc = 1.0;
    for a in &alphas {
        acc *= a;
        alpha_bars.push(acc);
    }
    Ok(NoiseSchedule {
        betas,
        alphas,
        alpha_bars,
    })
}

impl NoiseSchedule {
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bars.get(t).copied().ok_or_else(|| Error::index("t", t, self.len()))
    }

    /// Per-sample `(B, 1, 1, 1)` column of `f(ᾱ_t)`.
    fn column(&self, t: &[usize], dtype: DType, device: &candle_core::Device, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let v = t.iter().map(|&ti| self.alpha_bar(ti).map(&f)).collect::<Result<Vec<f64>>>()?;
        Ok(Tensor::from_vec(v, (t.len(), 1, 1, 1), device)?.to_dtype(dtype)?)
    }
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε` for a `(B, H, W, C)` batch with one `t` per sample.
pub fn q_sample(schedule: &NoiseSchedule, x0: &Tensor, t: &[usize], eps: &Tensor) -> Result<Tensor> {
    if x0.dims() != eps.dims() {
        return Err(Error::Shape(format!("x0 {:?} vs eps {:?}", x0.dims(), eps.dims())));
    }
    let b = x0.dims4()?.0;
    if t.len() != b {
        return Err(Error::Shape(format!("{} timesteps for a batch of {b}", t.len())));
    }
    let a = schedule.column(t, x0.dtype(), x0.device(), f64::sqrt)?;
    let s = schedule.column(t, x0.dtype(), x0.device(), |ab| (1.0 - ab).sqrt())?;
    Ok((x0.broadcast_mul(&a)? + eps.broadcast_mul(&s)?)?)
}
