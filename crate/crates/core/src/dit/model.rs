use candle_core::{DType, Tensor, D};

use super::block::{BlockCond, DitBlock};
use super::config::{DitConfig, Mechanism};
use super::embed::{patchify, sincos_2d, unpatchify, TimestepEmbedder};
use crate::diffusion::NoisePredictor;
use crate::error::{Error, Result};
use crate::nn::{layer_norm, mask_to_bias, masked_mean, modulate, Init, Linear, Mlp, ParamStore};
use crate::text::CondBatch;

#[derive(Debug, Clone)]
pub struct DitOutput {
    /// `(B, H, W, C)` noise prediction.
    pub eps: Tensor,
    /// `(B, H, W, C)` variance channels (unsupervised).
    pub extra: Tensor,
}

/// What one block saw during a traced forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTrace {
    /// 0-based block index.
    pub block: usize,
    /// Active condition rows per sample.
    pub cond_len: Vec<usize>,
    /// Keys attended to per sample in the conditioning attention (joint:
    /// image tokens plus condition rows; cross: condition rows; modulation:
    /// rows pooled).
    pub attn_len: Vec<usize>,
    pub out_tokens: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ForwardTrace {
    pub blocks: Vec<BlockTrace>,
}

#[derive(Debug, Clone)]
pub struct DitModel {
    pub config: DitConfig,
    patch_embed: Linear,
    pos: Tensor,
    t_embed: TimestepEmbedder,
    cond_proj: Option<Linear>,
    cond_mlp: Option<Mlp>,
    blocks: Vec<DitBlock>,
    final_ada: Linear,
    final_linear: Linear,
    dtype: DType,
}

impl DitModel {
    pub fn new(store: &mut ParamStore, config: DitConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let w = c.width;
        let p = c.patch_size;
        let (cond_proj, cond_mlp) = match c.mechanism {
            Mechanism::Modulation => (
                None,
                Some(Mlp::new(store, "dit.cond_mlp", (c.cond_dim, c.modulation_hidden, w), Init::XavierUniform)?),
            ),
            Mechanism::Joint | Mechanism::Cross => {
                (Some(store.linear("dit.cond_proj", c.cond_dim, w, Init::XavierUniform)?), None)
            }
        };
        let blocks = (0..c.depth)
            .map(|i| DitBlock::new(store, &format!("dit.blocks.{i}"), w, c.heads, c.mlp_ratio, c.mechanism))
            .collect::<Result<_>>()?;
        Ok(Self {
            patch_embed: store.linear("dit.patch_embed", p * p * c.in_channels, w, Init::XavierUniform)?,
            pos: sincos_2d(w, c.grid(), store.device(), store.dtype())?,
            t_embed: TimestepEmbedder::new(store, c.freq_dim, w, c.num_timesteps)?,
            cond_proj,
            cond_mlp,
            blocks,
            final_ada: store.linear("dit.final.ada", w, 2 * w, Init::Zeros)?,
            final_linear: store.linear("dit.final.linear", w, p * p * c.out_channels(), Init::Zeros)?,
            dtype: store.dtype(),
            config,
        })
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn check_input(&self, x_t: &Tensor, t: &[usize]) -> Result<usize> {
        let c = &self.config;
        let (b, h, w, ch) = x_t.dims4()?;
        if h != c.image_size || w != c.image_size || ch != c.in_channels {
            return Err(Error::Shape(format!(
                "model expects {0}x{0}x{1} input, got {h}x{w}x{ch}",
                c.image_size, c.in_channels
            )));
        }
        if t.len() != b {
            return Err(Error::Shape(format!("{} timesteps for a batch of {b}", t.len())));
        }
        Ok(b)
    }

    fn embed_tokens(&self, x_t: &Tensor) -> Result<Tensor> {
        let tokens = patchify(&x_t.to_dtype(self.dtype)?, self.config.patch_size)?;
        Ok(self.patch_embed.forward(&tokens)?.broadcast_add(&self.pos)?)
    }

    fn head(&self, x: &Tensor, c: &Tensor) -> Result<DitOutput> {
        let w = self.config.width;
        let ada = self.final_ada.forward(&c.silu()?)?;
        let h = modulate(&layer_norm(x, 1e-6)?, &ada.narrow(D::Minus1, 0, w)?, &ada.narrow(D::Minus1, w, w)?)?;
        let out = self.final_linear.forward(&h)?;
        let cfg = &self.config;
        let img = unpatchify(&out, cfg.image_size, cfg.image_size, cfg.patch_size, cfg.out_channels())?;
        let ch = cfg.in_channels;
        Ok(DitOutput {
            eps: img.narrow(3, 0, ch)?,
            extra: img.narrow(3, ch, ch)?,
        })
    }

    pub fn forward(&self, x_t: &Tensor, t: &[usize], cond: &CondBatch) -> Result<DitOutput> {
        self.run(x_t, t, cond, None)
    }

    pub fn forward_traced(&self, x_t: &Tensor, t: &[usize], cond: &CondBatch, trace: &mut ForwardTrace) -> Result<DitOutput> {
        self.run(x_t, t, cond, Some(trace))
    }

    /// Patch embedding, positions and the output head with every block skipped.
    pub fn head_only(&self, x_t: &Tensor, t: &[usize]) -> Result<DitOutput> {
        self.check_input(x_t, t)?;
        let x = self.embed_tokens(x_t)?;
        let t_emb = self.t_embed.forward(t, x.device(), self.dtype)?;
        self.head(&x, &t_emb)
    }

    fn run(&self, x_t: &Tensor, t: &[usize], cond: &CondBatch, mut trace: Option<&mut ForwardTrace>) -> Result<DitOutput> {
        let b = self.check_input(x_t, t)?;
        if cond.batch_size() != b {
            return Err(Error::Shape(format!("condition batch {} vs input batch {b}", cond.batch_size())));
        }
        if cond.cond_dim() != self.config.cond_dim {
            return Err(Error::Shape(format!(
                "condition width {} does not match the model's d_c {}",
                cond.cond_dim(),
                self.config.cond_dim
            )));
        }
        let cond = cond.to_dtype(self.dtype)?;
        let mut x = self.embed_tokens(x_t)?;
        let n = x.dim(1)?;
        let t_emb = self.t_embed.forward(t, x.device(), self.dtype)?;

        // Per-variant (gel rows in / out) precomputation, shared by all blocks.
        struct Variant {
            mask: Tensor,
            bias: Tensor,
            has_any: Tensor,
            c: Tensor,
            lens: Vec<usize>,
        }
        let projected = match &self.cond_proj {
            Some(p) => Some(p.forward(&cond.rows)?),
            None => None,
        };
        let make = |mask: &Tensor| -> Result<Variant> {
            let c = match &self.cond_mlp {
                Some(mlp) => (&t_emb + mlp.forward(&masked_mean(&cond.rows, mask)?)?)?,
                None => t_emb.clone(),
            };
            let counts = mask.sum(1)?;
            let lens = counts.to_dtype(DType::F64)?.to_vec1::<f64>()?.iter().map(|v| v.round() as usize).collect();
            Ok(Variant {
                bias: mask_to_bias(mask)?,
                has_any: counts.minimum(1.0)?.reshape((b, 1, 1))?,
                mask: mask.clone(),
                c,
                lens,
            })
        };
        let with_sen = make(&cond.with_sen)?;
        let obj_only = make(&cond.obj_only)?;

        for (i, block) in self.blocks.iter().enumerate() {
            let v = if self.config.block_receives_gel(i) { &with_sen } else { &obj_only };
            let bc = projected.as_ref().map(|rows| BlockCond {
                rows,
                mask: &v.mask,
                bias: &v.bias,
                has_any: &v.has_any,
            });
            x = block.forward(&x, &v.c, bc.as_ref())?;
            if let Some(tr) = trace.as_deref_mut() {
                let attn_len = match self.config.mechanism {
                    Mechanism::Joint => v.lens.iter().map(|l| l + n).collect(),
                    _ => v.lens.clone(),
                };
                tr.blocks.push(BlockTrace {
                    block: i,
                    cond_len: v.lens.clone(),
                    attn_len,
                    out_tokens: x.dim(1)?,
                });
            }
        }
        self.head(&x, &obj_only.c)
    }
}

impl NoisePredictor for DitModel {
    fn predict_noise(&self, x_t: &Tensor, t: &[usize], cond: &CondBatch) -> Result<Tensor> {
        Ok(self.forward(x_t, t, cond)?.eps)
    }

    fn dtype(&self) -> DType {
        self.dtype
    }
}
