use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::NoisePredictor;
use crate::error::Result;
use crate::text::CondBatch;

pub const DEFAULT_CFG_SCALE: f64 = 4.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub scale: f64,
    pub enabled: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            scale: DEFAULT_CFG_SCALE,
            enabled: true,
        }
    }
}

/// `s·ε_c + (1−s)·ε_∅`.
pub fn cfg_combine(eps_cond: &Tensor, eps_null: &Tensor, s: f64) -> Result<Tensor> {
    Ok(((eps_cond * s)? + (eps_null * (1.0 - s))?)?)
}

/// Guided noise estimate. Conditional and null branches run as one batch.
pub fn cfg_noise<M: NoisePredictor + ?Sized>(model: &M, x_t: &Tensor, t: &[usize], cond: &CondBatch, s: f64) -> Result<Tensor> {
    let b = x_t.dim(0)?;
    let null = cond.to_null()?;
    let both = CondBatch::concat(&[cond, &null])?;
    let x2 = Tensor::cat(&[x_t, x_t], 0)?;
    let t2: Vec<usize> = t.iter().chain(t).copied().collect();
    let eps = model.predict_noise(&x2, &t2, &both)?;
    cfg_combine(&eps.narrow(0, 0, b)?, &eps.narrow(0, b, b)?, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn endpoints_are_exact() {
        let dev = Device::Cpu;
        let c = Tensor::randn(0f32, 1.0, (2, 4, 4, 3), &dev).unwrap();
        let u = Tensor::randn(0f32, 1.0, (2, 4, 4, 3), &dev).unwrap();
        let v = |t: Tensor| t.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(v(cfg_combine(&c, &u, 1.0).unwrap()), v(c.clone()));
        assert_eq!(v(cfg_combine(&c, &u, 0.0).unwrap()), v(u.clone()));
    }
}
