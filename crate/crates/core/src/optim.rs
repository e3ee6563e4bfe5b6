//! AdamW with linear warmup and global-norm gradient clipping.

use candle_core::{backprop::GradStore, DType, Tensor, Var};
use candle_nn::{AdamW, Optimizer as _, ParamsAdamW};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 2e-5,
            weight_decay: 0.03,
            warmup_steps: 1000,
            grad_clip: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.weight_decay < 0.0 || self.grad_clip < 0.0 {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            self.lr
        } else {
            self.lr * ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub lr: f64,
    /// Norm before clipping.
    pub grad_norm: f64,
}

pub struct Optimizer {
    inner: AdamW,
    vars: Vec<Var>,
    config: OptimConfig,
    step: usize,
}

impl Optimizer {
    pub fn new(vars: Vec<Var>, config: OptimConfig) -> Result<Self> {
        config.validate()?;
        let inner = AdamW::new(
            vars.clone(),
            ParamsAdamW {
                lr: config.lr_at(0),
                beta1: config.beta1,
                beta2: config.beta2,
                eps: config.eps,
                weight_decay: config.weight_decay,
            },
        )?;
        Ok(Self {
            inner,
            vars,
            config,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Backpropagate `loss`, clip and apply one update.
    pub fn backward_step(&mut self, loss: &Tensor) -> Result<StepStats> {
        let grads = loss.backward()?;
        self.apply(grads)
    }

    pub fn apply(&mut self, mut grads: GradStore) -> Result<StepStats> {
        let mut sq = 0.0f64;
        for v in &self.vars {
            if let Some(g) = grads.get(v.as_tensor()) {
                sq += g.to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
            }
        }
        let norm = sq.sqrt();
        if !norm.is_finite() {
            return Err(Error::Training {
                t: self.step,
                xt_norm: norm,
            });
        }
        if self.config.grad_clip > 0.0 && norm > self.config.grad_clip {
            let scale = self.config.grad_clip / norm;
            for v in &self.vars {
                if let Some(g) = grads.remove(v.as_tensor()) {
                    grads.insert(v.as_tensor(), (g * scale)?);
                }
            }
        }
        let lr = self.config.lr_at(self.step);
        self.inner.set_learning_rate(lr);
        self.inner.step(&grads)?;
        self.step += 1;
        Ok(StepStats { lr, grad_norm: norm })
    }
}
