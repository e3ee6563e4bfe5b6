use candle_core::{Device, DType, Tensor};

use crate::error::{Error, Result};
use crate::nn::{Init, Linear, ParamStore};

/// `(B, H, W, C)` → `(B, n, p·p·C)` with patches in row-major grid order.
pub fn patchify(x: &Tensor, p: usize) -> Result<Tensor> {
    let (b, h, w, c) = x.dims4()?;
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::Shape(format!("{h}x{w} not divisible by patch size {p}")));
    }
    let (gh, gw) = (h / p, w / p);
    Ok(x.reshape((b, gh, p, gw, p, c))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?
        .reshape((b, gh * gw, p * p * c))?)
}

/// Inverse of [`patchify`] for an `h × w` image with `c` channels.
pub fn unpatchify(tokens: &Tensor, h: usize, w: usize, p: usize, c: usize) -> Result<Tensor> {
    let (b, n, d) = tokens.dims3()?;
    if p == 0 || h % p != 0 || w % p != 0 || n != (h / p) * (w / p) || d != p * p * c {
        return Err(Error::Shape(format!(
            "cannot unpatchify {n}x{d} tokens into {h}x{w}x{c} with patch {p}"
        )));
    }
    let (gh, gw) = (h / p, w / p);
    Ok(tokens
        .reshape((b, gh, gw, p, p, c))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?
        .reshape((b, h, w, c))?)
}

fn sincos_1d(dim: usize, positions: &[f64]) -> Vec<Vec<f64>> {
    let half = dim / 2;
    positions
        .iter()
        .map(|&pos| {
            let mut row = vec![0.0; dim];
            for i in 0..half {
                let omega = 1.0 / 10000f64.powf(i as f64 / half as f64);
                row[i] = (pos * omega).sin();
                row[half + i] = (pos * omega).cos();
            }
            row
        })
        .collect()
}

/// Fixed 2-D sin/cos table `(grid², width)`; the first half of the channels
/// encodes the row, the second half the column.
pub fn sincos_2d(width: usize, grid: usize, device: &Device, dtype: DType) -> Result<Tensor> {
    if width % 4 != 0 {
        return Err(Error::Config(format!("position embedding width {width} must be divisible by 4")));
    }
    let coords: Vec<f64> = (0..grid).map(|i| i as f64).collect();
    let emb = sincos_1d(width / 2, &coords);
    let mut data: Vec<f64> = Vec::with_capacity(grid * grid * width);
    for r in 0..grid {
        for c in 0..grid {
            data.extend_from_slice(&emb[r]);
            data.extend_from_slice(&emb[c]);
        }
    }
    Ok(Tensor::from_vec(data, (grid * grid, width), device)?.to_dtype(dtype)?)
}

/// Sinusoidal timestep features `[cos(t·f_i)…, sin(t·f_i)…]` with
/// `f_i = 10000^(-i/half)`.
pub fn timestep_frequencies(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let f = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (t * f).cos();
        out[half + i] = (t * f).sin();
    }
    out
}

#[derive(Debug, Clone)]
pub struct TimestepEmbedder {
    fc1: Linear,
    fc2: Linear,
    freq_dim: usize,
    num_timesteps: usize,
}

impl TimestepEmbedder {
    pub fn new(store: &mut ParamStore, freq_dim: usize, width: usize, num_timesteps: usize) -> Result<Self> {
        Ok(Self {
            fc1: store.linear("t_embed.fc1", freq_dim, width, Init::Normal(0.02))?,
            fc2: store.linear("t_embed.fc2", width, width, Init::Normal(0.02))?,
            freq_dim,
            num_timesteps,
        })
    }

    pub fn features(&self, ts: &[usize], device: &Device, dtype: DType) -> Result<Tensor> {
        let mut data = Vec::with_capacity(ts.len() * self.freq_dim);
        for &t in ts {
            if t > self.num_timesteps {
                return Err(Error::index("t", t, self.num_timesteps + 1));
            }
            data.extend(timestep_frequencies(t as f64, self.freq_dim));
        }
        Ok(Tensor::from_vec(data, (ts.len(), self.freq_dim), device)?.to_dtype(dtype)?)
    }

    /// `(B, width)`.
    pub fn forward(&self, ts: &[usize], device: &Device, dtype: DType) -> Result<Tensor> {
        let f = self.features(ts, device, dtype)?;
        self.fc2.forward(&self.fc1.forward(&f)?.silu()?)
    }
}
