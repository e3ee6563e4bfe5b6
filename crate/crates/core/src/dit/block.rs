use candle_core::{Tensor, D};

use super::config::Mechanism;
use crate::error::Result;
use crate::nn::{attention, layer_norm, merge_heads, modulate, split_heads, Init, Linear, Mlp, ParamStore};

const LN_EPS: f64 = 1e-6;

/// Condition rows as seen by one block: already projected to the model width.
pub struct BlockCond<'a> {
    /// `(B, M, width)`.
    pub rows: &'a Tensor,
    /// `(B, M)` 0/1.
    pub mask: &'a Tensor,
    /// `(B, 1, 1, M)` additive key bias derived from `mask`.
    pub bias: &'a Tensor,
    /// `(B, 1, 1)`: 1 when the sample has at least one active row.
    pub has_any: &'a Tensor,
}

#[derive(Debug, Clone)]
struct CrossAttention {
    q: Linear,
    kv: Linear,
    out: Linear,
}

/// adaLN-Zero transformer block with an optional conditioning path.
#[derive(Debug, Clone)]
pub struct DitBlock {
    ada: Linear,
    qkv: Linear,
    proj: Linear,
    mlp: Mlp,
    cross: Option<CrossAttention>,
    mechanism: Mechanism,
    heads: usize,
    width: usize,
}

impl DitBlock {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, mlp_ratio: usize, mechanism: Mechanism) -> Result<Self> {
        let cross = if mechanism == Mechanism::Cross {
            Some(CrossAttention {
                q: store.linear(&format!("{name}.cross.q"), width, width, Init::XavierUniform)?,
                kv: store.linear(&format!("{name}.cross.kv"), width, 2 * width, Init::XavierUniform)?,
                out: store.linear(&format!("{name}.cross.out"), width, width, Init::Zeros)?,
            })
        } else {
            None
        };
        Ok(Self {
            ada: store.linear(&format!("{name}.ada"), width, 6 * width, Init::Zeros)?,
            qkv: store.linear(&format!("{name}.attn.qkv"), width, 3 * width, Init::XavierUniform)?,
            proj: store.linear(&format!("{name}.attn.proj"), width, width, Init::XavierUniform)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), (width, mlp_ratio * width, width), Init::XavierUniform)?,
            cross,
            mechanism,
            heads,
            width,
        })
    }

    /// `x`: `(B, n, width)`, `c`: `(B, width)` modulation input.
    pub fn forward(&self, x: &Tensor, c: &Tensor, cond: Option<&BlockCond>) -> Result<Tensor> {
        let w = self.width;
        let ada = self.ada.forward(&c.silu()?)?;
        let chunk = |i: usize| ada.narrow(D::Minus1, i * w, w);
        let (shift_msa, scale_msa, gate_msa) = (chunk(0)?, chunk(1)?, chunk(2)?);
        let (shift_mlp, scale_mlp, gate_mlp) = (chunk(3)?, chunk(4)?, chunk(5)?);

        let h = modulate(&layer_norm(x, LN_EPS)?, &shift_msa, &scale_msa)?;
        let att = match (self.mechanism, cond) {
            (Mechanism::Joint, Some(cond)) => self.joint_attention(&h, cond)?,
            _ => self.self_attention(&h)?,
        };
        let mut x = (x + att.broadcast_mul(&gate_msa.unsqueeze(1)?)?)?;

        if let (Some(cross), Some(cond)) = (&self.cross, cond) {
            let q = split_heads(&cross.q.forward(&layer_norm(&x, LN_EPS)?)?, self.heads)?;
            let kv = cross.kv.forward(cond.rows)?;
            let k = split_heads(&kv.narrow(D::Minus1, 0, w)?, self.heads)?;
            let v = split_heads(&kv.narrow(D::Minus1, w, w)?, self.heads)?;
            let a = merge_heads(&attention(&q, &k, &v, Some(cond.bias))?)?;
            let a = cross.out.forward(&a)?.broadcast_mul(cond.has_any)?;
            x = (x + a)?;
        }

        let h = modulate(&layer_norm(&x, LN_EPS)?, &shift_mlp, &scale_mlp)?;
        Ok((&x + self.mlp.forward(&h)?.broadcast_mul(&gate_mlp.unsqueeze(1)?)?)?)
    }

    fn self_attention(&self, h: &Tensor) -> Result<Tensor> {
        let w = self.width;
        let qkv = self.qkv.forward(h)?;
        let q = split_heads(&qkv.narrow(D::Minus1, 0, w)?, self.heads)?;
        let k = split_heads(&qkv.narrow(D::Minus1, w, w)?, self.heads)?;
        let v = split_heads(&qkv.narrow(D::Minus1, 2 * w, w)?, self.heads)?;
        self.proj.forward(&merge_heads(&attention(&q, &k, &v, None)?)?)
    }

    /// Self-attention over `[cond; image]`; only image-token outputs are kept.
    fn joint_attention(&self, h: &Tensor, cond: &BlockCond) -> Result<Tensor> {
        let w = self.width;
        let (b, n, _) = h.dims3()?;
        let m = cond.rows.dim(1)?;
        let seq = Tensor::cat(&[&layer_norm(cond.rows, LN_EPS)?, h], 1)?;
        let qkv = self.qkv.forward(&seq)?;
        let q = split_heads(&qkv.narrow(D::Minus1, 0, w)?.narrow(1, m, n)?, self.heads)?;
        let k = split_heads(&qkv.narrow(D::Minus1, w, w)?, self.heads)?;
        let v = split_heads(&qkv.narrow(D::Minus1, 2 * w, w)?, self.heads)?;
        let img_bias = Tensor::zeros((b, 1, 1, n), cond.bias.dtype(), cond.bias.device())?;
        let bias = Tensor::cat(&[cond.bias, &img_bias], 3)?;
        self.proj.forward(&merge_heads(&attention(&q, &k, &v, Some(&bias))?)?)
    }
}
