//! Object-level text encoder: token embedding + learned positions followed by
//! one bidirectional pre-norm self-attention layer.

use candle_core::{DType, Tensor};

use super::tokenizer::TokenSequence;
use crate::error::{Error, Result};
use crate::nn::{attention, mask_to_bias, merge_heads, split_heads, Init, LayerNorm, Linear, Mlp, ParamStore};

#[derive(Debug, Clone)]
pub struct ObjectEncoder {
    embed: Tensor,
    pos: Tensor,
    ln1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    ln2: LayerNorm,
    mlp: Mlp,
    ln_out: LayerNorm,
    heads: usize,
    dim: usize,
    max_len: usize,
    vocab_size: usize,
}

impl ObjectEncoder {
    pub fn new(store: &mut ParamStore, vocab_size: usize, max_len: usize, dim: usize, heads: usize) -> Result<Self> {
        if dim % heads != 0 {
            return Err(Error::Config(format!("text dim {dim} not divisible by {heads} heads")));
        }
        Ok(Self {
            embed: store.param("text.embed", &[vocab_size, dim], Init::Normal(0.5))?,
            pos: store.param("text.pos", &[max_len.max(1), dim], Init::Normal(0.1))?,
            ln1: store.layer_norm("text.ln1", dim)?,
            qkv: store.linear("text.qkv", dim, 3 * dim, Init::XavierUniform)?,
            proj: store.linear("text.proj", dim, dim, Init::XavierUniform)?,
            ln2: store.layer_norm("text.ln2", dim)?,
            mlp: Mlp::new(store, "text.mlp", (dim, 2 * dim, dim), Init::XavierUniform)?,
            ln_out: store.layer_norm("text.ln_out", dim)?,
            heads,
            dim,
            max_len,
            vocab_size,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Encode a padded batch. Returns `(B, L, d)` with `L` the longest
    /// sequence; rows past each sequence's length are padding.
    pub fn encode_batch(&self, seqs: &[&TokenSequence]) -> Result<Tensor> {
        let b = seqs.len();
        let l = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let device = self.embed.device();
        if b == 0 || l == 0 {
            return Ok(Tensor::zeros((b, l, self.dim), self.embed.dtype(), device)?);
        }
        if l > self.max_len {
            return Err(Error::Shape(format!("sequence length {l} exceeds encoder max {}", self.max_len)));
        }
        let mut ids = Vec::with_capacity(b * l);
        let mut mask = Vec::with_capacity(b * l);
        for s in seqs {
            for i in 0..l {
                let id = s.ids.get(i).copied();
                if let Some(id) = id {
                    if id as usize >= self.vocab_size {
                        return Err(Error::index("token id", id as usize, self.vocab_size));
                    }
                }
                ids.push(id.unwrap_or(0));
                mask.push(if id.is_some() { 1.0f32 } else { 0.0 });
            }
        }
        let ids = Tensor::from_vec(ids, b * l, device)?;
        let mask = Tensor::from_vec(mask, (b, l), device)?.to_dtype(self.embed.dtype())?;
        let x = self
            .embed
            .index_select(&ids, 0)?
            .reshape((b, l, self.dim))?
            .broadcast_add(&self.pos.narrow(0, 0, l)?)?;

        let h = self.ln1.forward(&x)?;
        let qkv = self.qkv.forward(&h)?;
        let q = split_heads(&qkv.narrow(2, 0, self.dim)?, self.heads)?;
        let k = split_heads(&qkv.narrow(2, self.dim, self.dim)?, self.heads)?;
        let v = split_heads(&qkv.narrow(2, 2 * self.dim, self.dim)?, self.heads)?;
        let att = attention(&q, &k, &v, Some(&mask_to_bias(&mask)?))?;
        let x = (x + self.proj.forward(&merge_heads(&att)?)?)?;
        let x = (&x + self.mlp.forward(&self.ln2.forward(&x)?)?)?;
        self.ln_out.forward(&x)
    }

    /// `l × d` embedding of a single sequence.
    pub fn encode(&self, tokens: &TokenSequence) -> Result<Tensor> {
        if tokens.is_empty() {
            return Ok(Tensor::zeros((0, self.dim), self.embed.dtype(), self.embed.device())?);
        }
        Ok(self.encode_batch(&[tokens])?.squeeze(0)?)
    }

    pub fn dtype(&self) -> DType {
        self.embed.dtype()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenizer::Vocab;

    fn setup() -> (Vocab, ObjectEncoder) {
        let vocab = Vocab::from_texts(["the touch of a seam is smooth rough"], 32);
        let mut store = ParamStore::new(1, DType::F32);
        let enc = ObjectEncoder::new(&mut store, vocab.len(), 32, 16, 2).unwrap();
        (vocab, enc)
    }

    #[test]
    fn empty_sequence_gives_empty_matrix() {
        let (vocab, enc) = setup();
        let out = enc.encode(&vocab.tokenize("")).unwrap();
        assert_eq!(out.dims(), &[0, 16]);
    }

    #[test]
    fn rows_match_tokens_and_are_deterministic() {
        let (vocab, enc) = setup();
        let t = vocab.tokenize("the touch of a seam is smooth");
        let a = enc.encode(&t).unwrap();
        let b = enc.encode(&t).unwrap();
        assert_eq!(a.dims(), &[7, 16]);
        assert_eq!(a.to_vec2::<f32>().unwrap(), b.to_vec2::<f32>().unwrap());
    }

    #[test]
    fn texture_word_changes_embedding() {
        let (vocab, enc) = setup();
        let a = enc.encode(&vocab.tokenize("the touch of a seam is smooth")).unwrap().to_vec2::<f32>().unwrap();
        let b = enc.encode(&vocab.tokenize("the touch of a seam is rough")).unwrap().to_vec2::<f32>().unwrap();
        assert!(a.iter().zip(&b).any(|(ra, rb)| ra != rb));
    }

    #[test]
    fn padding_does_not_leak() {
        let (vocab, enc) = setup();
        let short = vocab.tokenize("a seam is smooth");
        let long = vocab.tokenize("the touch of a seam is rough");
        let alone = enc.encode(&short).unwrap();
        let batched = enc.encode_batch(&[&short, &long]).unwrap().get(0).unwrap().narrow(0, 0, 4).unwrap();
        let diff = (alone - batched).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(diff < 1e-5, "{diff}");
    }
}
