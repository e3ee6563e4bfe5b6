//! Minimal layers over candle tensors with seeded, named parameters.
//!
//! Parameters live in a [`ParamStore`] keyed by dotted names
//! (`blocks.0.attn.qkv.weight`). Initial values come from a ChaCha stream so a
//! model built twice from the same seed is bit-identical, independent of
//! candle's own RNG.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Additive attention bias for masked keys. Large enough that `exp` of a
/// masked score underflows to exactly zero in f32 and f64.
pub const MASK_BIAS: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
    /// Glorot uniform over the first two dims (`fan_in`, `fan_out`).
    XavierUniform,
}

pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    device: Device,
    dtype: DType,
    rng: Rng,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            device: Device::Cpu,
            dtype,
            rng: rng::stream(seed, 0x9a7a),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::Config(format!("parameter {name} registered twice")));
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Normal(std) => rng::normal_vec_f64(&mut self.rng, n).into_iter().map(|v| v * std).collect(),
            Init::XavierUniform => {
                let (fan_in, fan_out) = match shape {
                    [a, b, ..] => (*a, *b),
                    [a] => (*a, *a),
                    [] => (1, 1),
                };
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| self.rng.random_range(-bound..bound)).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let tensor = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(tensor)
    }

    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, init: Init) -> Result<Linear> {
        let weight = self.param(&format!("{name}.weight"), &[fan_in, fan_out], init)?;
        let bias = self.param(&format!("{name}.bias"), &[fan_out], Init::Zeros)?;
        Ok(Linear {
            weight,
            bias: Some(bias),
        })
    }

    pub fn layer_norm(&mut self, name: &str, dim: usize) -> Result<LayerNorm> {
        Ok(LayerNorm {
            gamma: Some(self.param(&format!("{name}.gamma"), &[dim], Init::Ones)?),
            beta: Some(self.param(&format!("{name}.beta"), &[dim], Init::Zeros)?),
        })
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn named_vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn num_params(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Overwrite parameter values in place (shapes must match).
    pub fn assign(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.vars {
            let v = values
                .get(name)
                .ok_or_else(|| Error::Config(format!("checkpoint is missing parameter {name}")))?;
            if v.dims() != var.dims() {
                return Err(Error::Shape(format!(
                    "parameter {name}: checkpoint shape {:?} vs model {:?}",
                    v.dims(),
                    var.dims()
                )));
            }
            var.set(&v.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    /// `(fan_in, fan_out)`.
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let fan_in = *dims.last().ok_or_else(|| Error::Shape("linear on a scalar".into()))?;
        let (w_in, w_out) = self.weight.dims2()?;
        if fan_in != w_in {
            return Err(Error::Shape(format!("linear expects last dim {w_in}, got {fan_in}")));
        }
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let mut y = x.reshape((rows, fan_in))?.matmul(&self.weight)?;
        if let Some(b) = &self.bias {
            y = y.broadcast_add(b)?;
        }
        let mut out_dims = dims;
        *out_dims.last_mut().expect("non-empty") = w_out;
        Ok(y.reshape(out_dims)?)
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[1]
    }
}

/// Layer norm over the last dimension; affine terms are optional.
#[derive(Debug, Clone, Default)]
pub struct LayerNorm {
    pub gamma: Option<Tensor>,
    pub beta: Option<Tensor>,
}

impl LayerNorm {
    pub fn plain() -> Self {
        Self::default()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = layer_norm(x, 1e-6)?;
        if let Some(g) = &self.gamma {
            y = y.broadcast_mul(g)?;
        }
        if let Some(b) = &self.beta {
            y = y.broadcast_add(b)?;
        }
        Ok(y)
    }
}

pub fn layer_norm(x: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    Ok(centered.broadcast_div(&(var + eps)?.sqrt()?)?)
}

/// Two-layer perceptron with SiLU.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, dims: (usize, usize, usize), out_init: Init) -> Result<Self> {
        Ok(Self {
            fc1: store.linear(&format!("{name}.fc1"), dims.0, dims.1, Init::XavierUniform)?,
            fc2: store.linear(&format!("{name}.fc2"), dims.1, dims.2, out_init)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.silu()?)
    }
}

/// `(B, n, heads * dh)` → `(B, heads, n, dh)`.
pub fn split_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    let (b, n, w) = x.dims3()?;
    if w % heads != 0 {
        return Err(Error::Shape(format!("width {w} not divisible by {heads} heads")));
    }
    Ok(x.reshape((b, n, heads, w / heads))?.transpose(1, 2)?.contiguous()?)
}

/// Inverse of [`split_heads`].
pub fn merge_heads(x: &Tensor) -> Result<Tensor> {
    let (b, h, n, dh) = x.dims4()?;
    Ok(x.transpose(1, 2)?.contiguous()?.reshape((b, n, h * dh))?)
}

/// Turn a `(B, M)` 0/1 key mask into a `(B, 1, 1, M)` additive bias.
pub fn mask_to_bias(mask: &Tensor) -> Result<Tensor> {
    let (b, m) = mask.dims2()?;
    let bias = ((mask - 1.0)? * -MASK_BIAS)?;
    Ok(bias.reshape((b, 1, 1, m))?)
}

/// Scaled dot-product attention. `q`: `(B,h,nq,dh)`, `k`/`v`: `(B,h,nk,dh)`,
/// `bias`: optional `(B,1,1,nk)` additive key bias.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let dh = q.dim(D::Minus1)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut scores = (q.matmul(&k.t()?.contiguous()?)? * scale)?;
    if let Some(b) = bias {
        scores = scores.broadcast_add(b)?;
    }
    let probs = candle_nn::ops::softmax(&scores, D::Minus1)?;
    Ok(probs.matmul(v)?)
}

/// `x * (1 + scale) + shift` with per-sample `(B, w)` shift/scale.
pub fn modulate(x: &Tensor, shift: &Tensor, scale: &Tensor) -> Result<Tensor> {
    let scale = (scale.unsqueeze(1)? + 1.0)?;
    Ok(x.broadcast_mul(&scale)?.broadcast_add(&shift.unsqueeze(1)?)?)
}

/// Mean over active rows of `(B, M, d)` given a `(B, M)` mask; zero when a
/// sample has no active rows.
pub fn masked_mean(rows: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let weighted = rows.broadcast_mul(&mask.unsqueeze(2)?)?.sum(1)?;
    let count = mask.sum_keepdim(1)?.maximum(1.0)?;
    Ok(weighted.broadcast_div(&count)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_is_seeded() {
        let mut a = ParamStore::new(3, DType::F32);
        let mut b = ParamStore::new(3, DType::F32);
        let ta = a.param("w", &[4, 5], Init::Normal(1.0)).unwrap();
        let tb = b.param("w", &[4, 5], Init::Normal(1.0)).unwrap();
        assert_eq!(
            ta.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            tb.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        );
        assert!(a.param("w", &[1], Init::Zeros).is_err());
    }

    #[test]
    fn masked_attention_ignores_masked_keys_exactly() {
        let dev = Device::Cpu;
        let q = Tensor::randn(0f32, 1.0, (1, 1, 3, 4), &dev).unwrap();
        let k = Tensor::randn(0f32, 1.0, (1, 1, 5, 4), &dev).unwrap();
        let v = Tensor::randn(0f32, 1.0, (1, 1, 5, 4), &dev).unwrap();
        let mask = Tensor::new(&[[1f32, 1., 0., 1., 0.]], &dev).unwrap();
        let full = attention(&q, &k, &v, Some(&mask_to_bias(&mask).unwrap())).unwrap();
        let idx = Tensor::new(&[0u32, 1, 3], &dev).unwrap();
        let k2 = k.index_select(&idx, 2).unwrap();
        let v2 = v.index_select(&idx, 2).unwrap();
        let sub = attention(&q, &k2, &v2, None).unwrap();
        let diff = (full - sub).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn layer_norm_zero_mean_unit_var() {
        let dev = Device::Cpu;
        let x = Tensor::randn(2f64, 3.0, (4, 16), &dev).unwrap();
        let y = layer_norm(&x, 0.0).unwrap();
        let m = y.mean_keepdim(1).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        let v = y.sqr().unwrap().mean_keepdim(1).unwrap().to_vec2::<f64>().unwrap();
        assert!(m < 1e-12);
        for row in v {
            assert!((row[0] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn masked_mean_of_empty_mask_is_zero() {
        let dev = Device::Cpu;
        let rows = Tensor::ones((2, 3, 4), DType::F32, &dev).unwrap();
        let mask = Tensor::new(&[[0f32, 0., 0.], [1., 1., 0.]], &dev).unwrap();
        let m = masked_mean(&rows, &mask).unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(m[0], vec![0.0; 4]);
        assert_eq!(m[1], vec![1.0; 4]);
    }
}
