use std::collections::{BTreeMap, BTreeSet};

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::dit::{patchify, sincos_2d};
use crate::error::{Error, Result};
use crate::nn::{attention, merge_heads, split_heads, Init, LayerNorm, Linear, Mlp, ParamStore};
use crate::rng;

/// Frozen text tower: IDF-weighted sum of fixed pseudo-random word vectors.
///
/// IDF is fitted on the caption corpus, so words shared by every caption
/// (the template) carry no weight and the embedding is driven by the words
/// that distinguish captions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashedTextEncoder {
    pub dim: usize,
    pub seed: u64,
    pub documents: usize,
    pub document_frequency: BTreeMap<String, usize>,
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

impl HashedTextEncoder {
    pub fn fit<'a, I: IntoIterator<Item = &'a str>>(corpus: I, dim: usize, seed: u64) -> Self {
        let mut df = BTreeMap::new();
        let mut n = 0;
        for doc in corpus {
            n += 1;
            let uniq: BTreeSet<String> = words(doc).collect();
            for w in uniq {
                *df.entry(w).or_insert(0) += 1;
            }
        }
        Self {
            dim,
            seed,
            documents: n,
            document_frequency: df,
        }
    }

    pub fn idf(&self, word: &str) -> f64 {
        let df = self.document_frequency.get(word).copied().unwrap_or(0);
        ((self.documents as f64 + 1.0) / (df as f64 + 1.0)).ln()
    }

    fn word_vector(&self, word: &str) -> Vec<f64> {
        let mut r = rng::stream(self.seed ^ rng::fnv1a(word.as_bytes()), 0x7e7);
        rng::normal_vec_f64(&mut r, self.dim)
    }

    /// Unnormalised embedding; all-zero when every word has zero weight.
    pub fn embed(&self, text: &str) -> Vec<f32> {
        let mut acc = vec![0.0f64; self.dim];
        for w in words(text) {
            let weight = self.idf(&w);
            if weight == 0.0 {
                continue;
            }
            for (a, v) in acc.iter_mut().zip(self.word_vector(&w)) {
                *a += weight * v;
            }
        }
        acc.into_iter().map(|v| v as f32).collect()
    }

    pub fn embed_batch(&self, texts: &[&str], dtype: DType) -> Result<Tensor> {
        let data: Vec<f32> = texts.iter().flat_map(|t| self.embed(t)).collect();
        Ok(Tensor::from_vec(data, (texts.len(), self.dim), &Device::Cpu)?.to_dtype(dtype)?)
    }
}

#[derive(Debug, Clone)]
struct EncoderBlock {
    ln1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    ln2: LayerNorm,
    mlp: Mlp,
    heads: usize,
    width: usize,
}

impl EncoderBlock {
    fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            ln1: store.layer_norm(&format!("{name}.ln1"), width)?,
            qkv: store.linear(&format!("{name}.qkv"), width, 3 * width, Init::XavierUniform)?,
            proj: store.linear(&format!("{name}.proj"), width, width, Init::XavierUniform)?,
            ln2: store.layer_norm(&format!("{name}.ln2"), width)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), (width, 2 * width, width), Init::XavierUniform)?,
            heads,
            width,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let w = self.width;
        let qkv = self.qkv.forward(&self.ln1.forward(x)?)?;
        let q = split_heads(&qkv.narrow(D::Minus1, 0, w)?, self.heads)?;
        let k = split_heads(&qkv.narrow(D::Minus1, w, w)?, self.heads)?;
        let v = split_heads(&qkv.narrow(D::Minus1, 2 * w, w)?, self.heads)?;
        let x = (x + self.proj.forward(&merge_heads(&attention(&q, &k, &v, None)?)?)?)?;
        Ok((&x + self.mlp.forward(&self.ln2.forward(&x)?)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TactileEncoderConfig {
    pub image_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    pub embed_dim: usize,
}

impl Default for TactileEncoderConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            channels: 3,
            patch_size: 4,
            width: 64,
            depth: 2,
            heads: 4,
            embed_dim: 64,
        }
    }
}

/// Small patch transformer, mean-pooled and projected to the shared space.
#[derive(Debug, Clone)]
pub struct TactileEncoder {
    config: TactileEncoderConfig,
    patch: Linear,
    pos: Tensor,
    blocks: Vec<EncoderBlock>,
    ln: LayerNorm,
    head: Linear,
}

impl TactileEncoder {
    pub fn new(store: &mut ParamStore, config: TactileEncoderConfig) -> Result<Self> {
        let c = &config;
        if c.patch_size == 0 || c.image_size % c.patch_size != 0 || c.width % c.heads != 0 {
            return Err(Error::Config(format!("invalid tactile encoder config {c:?}")));
        }
        let grid = c.image_size / c.patch_size;
        Ok(Self {
            patch: store.linear("tac.patch", c.patch_size * c.patch_size * c.channels, c.width, Init::XavierUniform)?,
            pos: sincos_2d(c.width, grid, store.device(), store.dtype())?,
            blocks: (0..c.depth)
                .map(|i| EncoderBlock::new(store, &format!("tac.blocks.{i}"), c.width, c.heads))
                .collect::<Result<_>>()?,
            ln: store.layer_norm("tac.ln", c.width)?,
            head: store.linear("tac.head", c.width, c.embed_dim, Init::XavierUniform)?,
            config,
        })
    }

    pub fn config(&self) -> &TactileEncoderConfig {
        &self.config
    }

    /// `(B, H, W, C)` images in `[0, 1]` → `(B, d_e)`.
    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        let x = (images - 0.5)?;
        let mut x = self.patch.forward(&patchify(&x, self.config.patch_size)?)?.broadcast_add(&self.pos)?;
        for b in &self.blocks {
            x = b.forward(&x)?;
        }
        self.head.forward(&self.ln.forward(&x)?.mean(1)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_words_get_no_weight() {
        let corpus = ["the touch of a seam is rough", "the touch of a button is smooth"];
        let enc = HashedTextEncoder::fit(corpus, 16, 1);
        assert_eq!(enc.idf("the"), 0.0);
        assert!(enc.idf("rough") > 0.0);
        assert!(enc.idf("velvet") > enc.idf("rough"));
        assert!(enc.embed("the touch of a").iter().all(|&v| v == 0.0));
        assert_ne!(enc.embed(corpus[0]), enc.embed(corpus[1]));
        assert_eq!(enc.embed(corpus[0]), enc.embed(corpus[0]));
    }

    #[test]
    fn tactile_output_shape() {
        let mut store = ParamStore::new(0, DType::F32);
        let enc = TactileEncoder::new(&mut store, TactileEncoderConfig::default()).unwrap();
        let x = Tensor::zeros((3, 32, 32, 3), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(enc.forward(&x).unwrap().dims(), &[3, 64]);
    }
}
