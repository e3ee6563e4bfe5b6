use std::str::FromStr;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::codec::Codec;
use super::guidance::{cfg_noise, GuidanceConfig};
use super::schedule::NoiseSchedule;
use super::NoisePredictor;
use crate::error::{Error, Result};
use crate::rng;
use crate::text::{CondBatch, ConditionBundle};

const NOISE_STREAM: u64 = 0x5a3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    /// Ancestral sampling over every step of the schedule.
    Ddpm,
    /// Deterministic sampling on a uniform stride.
    #[default]
    Ddim,
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "ddpm" => Ok(SamplerKind::Ddpm),
            "ddim" => Ok(SamplerKind::Ddim),
            other => Err(Error::Config(format!("unknown sampler {other:?} (ddpm|ddim)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Number of model evaluations for the strided sampler. Ignored by DDPM.
    pub steps: usize,
    pub guidance: GuidanceConfig,
    /// Clamp the predicted clean latent to the codec's range at every step.
    pub clip_denoised: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Ddim,
            steps: 50,
            guidance: GuidanceConfig::default(),
            clip_denoised: true,
        }
    }
}

/// `steps` timesteps `round(k(T−1)/(steps−1))`, ascending, both ends included.
pub fn ddim_timesteps(num_timesteps: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > num_timesteps {
        return Err(Error::Config(format!("steps must be in [1, {num_timesteps}], got {steps}")));
    }
    if steps == 1 {
        return Ok(vec![num_timesteps - 1]);
    }
    let span = (num_timesteps - 1) as f64;
    Ok((0..steps).map(|k| (k as f64 * span / (steps - 1) as f64).round() as usize).collect())
}

/// Starting noise for one sample: a pure function of its seed.
pub fn initial_noise(seed: u64, shape: (usize, usize, usize), dtype: DType, device: &Device) -> Result<Tensor> {
    let mut r = rng::stream(seed, NOISE_STREAM);
    let v = rng::normal_vec_f64(&mut r, shape.0 * shape.1 * shape.2);
    Ok(Tensor::from_vec(v, shape, device)?.to_dtype(dtype)?)
}

/// Observer called with `(step index, t, condition batch)` before each model call.
pub type StepObserver<'a> = &'a mut dyn FnMut(usize, usize, &CondBatch);

/// Generate one image per bundle. `seeds[i]` fixes sample `i`'s noise, so a
/// sample does not depend on the rest of the batch. `latent_shape` is
/// `(H, W, C)` in latent space; the result is decoded and clamped to `[0, 1]`.
#[allow(clippy::too_many_arguments)]
pub fn sample<M: NoisePredictor + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    bundles: &[ConditionBundle],
    latent_shape: (usize, usize, usize),
    config: &SamplerConfig,
    seeds: &[u64],
    codec: &dyn Codec,
    mut observer: Option<StepObserver>,
) -> Result<Tensor> {
    if bundles.len() != seeds.len() || bundles.is_empty() {
        return Err(Error::Shape(format!("{} bundles vs {} seeds", bundles.len(), seeds.len())));
    }
    let b = bundles.len();
    let big_t = schedule.len();
    let dtype = model.dtype();
    let device = Device::Cpu;
    let noise = seeds
        .iter()
        .map(|&s| initial_noise(s, latent_shape, dtype, &device))
        .collect::<Result<Vec<_>>>()?;
    let mut x = Tensor::stack(&noise, 0)?;
    let mut step_rngs: Vec<rng::Rng> = seeds.iter().map(|&s| rng::stream(s, NOISE_STREAM + 1)).collect();
    let drop = vec![false; b];

    let times: Vec<usize> = match config.kind {
        SamplerKind::Ddpm => (0..big_t).collect(),
        SamplerKind::Ddim => ddim_timesteps(big_t, config.steps)?,
    };
    for (step, i) in (0..times.len()).rev().enumerate() {
        let t = times[i];
        let ts = vec![t; b];
        let cond = CondBatch::from_bundles(bundles, &ts, &drop, big_t)?;
        if let Some(obs) = observer.as_deref_mut() {
            obs(step, t, &cond);
        }
        let eps = if config.guidance.enabled {
            cfg_noise(model, &x, &ts, &cond, config.guidance.scale)?
        } else {
            model.predict_noise(&x, &ts, &cond)?
        }
        .detach();
        let ab = schedule.alpha_bars[t];
        let mut x0 = ((&x - (&eps * (1.0 - ab).sqrt())?)? / ab.sqrt())?;
        if config.clip_denoised {
            let (lo, hi) = codec.latent_range();
            x0 = x0.clamp(lo, hi)?;
        }
        x = match config.kind {
            SamplerKind::Ddim => {
                if i == 0 {
                    x0
                } else {
                    let ab_prev = schedule.alpha_bars[times[i - 1]];
                    // Re-derive ε from the (possibly clipped) x0 estimate.
                    let eps_hat = ((&x - (&x0 * ab.sqrt())?)? / (1.0 - ab).sqrt())?;
                    ((&x0 * ab_prev.sqrt())? + (eps_hat * (1.0 - ab_prev).sqrt())?)?
                }
            }
            SamplerKind::Ddpm => {
                if t == 0 {
                    x0
                } else {
                    let ab_prev = schedule.alpha_bars[t - 1];
                    let beta = schedule.betas[t];
                    let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
                    let ct = schedule.alphas[t].sqrt() * (1.0 - ab_prev) / (1.0 - ab);
                    let mean = ((&x0 * c0)? + (&x * ct)?)?;
                    let n = latent_shape.0 * latent_shape.1 * latent_shape.2;
                    let z: Vec<f64> = step_rngs.iter_mut().flat_map(|r| rng::normal_vec_f64(r, n)).collect();
                    let z = Tensor::from_vec(z, x.dims(), &device)?.to_dtype(dtype)?;
                    (mean + (z * beta.sqrt())?)?
                }
            }
        };
        let total = x.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !total.is_finite() {
            return Err(Error::Sampling { step, t });
        }
    }
    Ok(codec.decode(&x)?.clamp(0.0, 1.0)?)
}
