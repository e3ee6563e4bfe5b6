//! The full text-to-touch generator: object text encoder, gel prompt bank,
//! learned null condition and the diffusion transformer, under one parameter
//! store and one checkpoint.

use std::path::Path;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::diffusion::{codec_by_name, Codec, NoisePredictor};
use crate::dit::{DitConfig, DitModel};
use crate::error::{Error, Result};
use crate::nn::{Init, ParamStore};
use crate::text::{CondBatch, ConditionBundle, ConditionToggles, GelPromptBank, ObjectEncoder, Phase, ThetaGate, Vocab};

pub const CHECKPOINT_KIND: &str = "diffusion";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dit: DitConfig,
    pub toggles: ConditionToggles,
    /// Prompt tokens per gel status.
    pub n_gs: usize,
    pub gate: ThetaGate,
    pub text_heads: usize,
    pub max_tokens: usize,
    /// Probability of replacing a training condition by the null row.
    pub cfg_drop_prob: f64,
    pub codec: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dit: DitConfig::default(),
            toggles: ConditionToggles::ALL,
            n_gs: 4,
            gate: ThetaGate::new(600),
            text_heads: 2,
            max_tokens: crate::text::DEFAULT_MAX_TOKENS,
            cfg_drop_prob: 0.1,
            codec: "pixel".into(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.dit.validate()?;
        if self.toggles.gel && self.n_gs == 0 {
            return Err(Error::Config("gel conditioning needs n_gs >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.cfg_drop_prob) {
            return Err(Error::Config(format!("cfg_drop_prob {} outside [0, 1]", self.cfg_drop_prob)));
        }
        if self.gate.theta_t > self.dit.num_timesteps {
            return Err(Error::Config(format!(
                "theta_t {} exceeds T = {}",
                self.gate.theta_t, self.dit.num_timesteps
            )));
        }
        if self.max_tokens == 0 || self.dit.cond_dim % self.text_heads.max(1) != 0 {
            return Err(Error::Config("invalid text encoder settings".into()));
        }
        codec_by_name(&self.codec)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    vocab: Vec<String>,
    gel_count: usize,
    seed: u64,
    codec: String,
}

pub struct TouchModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub vocab: Vocab,
    pub gel_count: usize,
    pub seed: u64,
    pub text: ObjectEncoder,
    pub bank: Option<GelPromptBank>,
    pub null: Tensor,
    pub dit: DitModel,
}

impl TouchModel {
    pub fn new(config: ModelConfig, vocab: Vocab, gel_count: usize, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let d = config.dit.cond_dim;
        let mut store = ParamStore::new(seed, dtype);
        let text = ObjectEncoder::new(&mut store, vocab.len(), config.max_tokens, d, config.text_heads)?;
        let bank = if config.toggles.gel {
            Some(GelPromptBank::new(&mut store, gel_count, config.n_gs, d)?)
        } else {
            None
        };
        let null = store.param("null_embedding", &[1, d], Init::Normal(1.0))?;
        let dit = DitModel::new(&mut store, config.dit.clone())?;
        Ok(Self {
            config,
            store,
            vocab,
            gel_count,
            seed,
            text,
            bank,
            null,
            dit,
        })
    }

    pub fn codec(&self) -> Result<Box<dyn Codec>> {
        codec_by_name(&self.config.codec)
    }

    /// Object-level caption for this model's toggles.
    pub fn caption(&self, shape_caption: &str, texture_caption: &str) -> Result<String> {
        self.config.toggles.caption(shape_caption, texture_caption)
    }

    /// Encode `(caption, gel_id)` requests into condition bundles.
    pub fn bundles(&self, requests: &[(&str, usize)], phase: Phase) -> Result<Vec<ConditionBundle>> {
        let tokens: Vec<_> = requests.iter().map(|(c, _)| self.vocab.tokenize(c)).collect();
        for t in &tokens {
            if t.truncated {
                log::warn!("caption truncated to {} tokens", self.vocab.max_tokens);
            }
        }
        let refs: Vec<_> = tokens.iter().collect();
        let encoded = self.text.encode_batch(&refs)?;
        let theta_t = self.config.gate.effective(phase);
        requests
            .iter()
            .zip(&tokens)
            .enumerate()
            .map(|(i, ((_, gel), tok))| {
                if *gel >= self.gel_count {
                    return Err(Error::index("gel_id", *gel, self.gel_count));
                }
                let c_obj = encoded.get(i)?.narrow(0, 0, tok.len())?;
                let c_sen = match &self.bank {
                    Some(b) => Some(b.prompt(*gel)?),
                    None => None,
                };
                Ok(ConditionBundle {
                    c_obj,
                    c_sen,
                    null_embedding: self.null.clone(),
                    theta_t,
                    gel_id: *gel,
                })
            })
            .collect()
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = Meta {
            vocab: self.vocab.words().to_vec(),
            gel_count: self.gel_count,
            seed: self.seed,
            codec: self.config.codec.clone(),
        };
        Ok(Checkpoint::new(
            CHECKPOINT_KIND,
            serde_json::to_value(&self.config)?,
            serde_json::to_value(&meta)?,
            self.store.snapshot()?,
        ))
    }

    pub fn from_checkpoint(ck: &Checkpoint, dtype: DType) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let config: ModelConfig = serde_json::from_value(ck.config.clone())?;
        let meta: Meta = serde_json::from_value(ck.meta.clone())?;
        if meta.codec != config.codec {
            return Err(Error::Config(format!("checkpoint codec {:?} vs config {:?}", meta.codec, config.codec)));
        }
        let vocab = Vocab::parse(&(meta.vocab.join("\n") + "\n"), config.max_tokens).map_err(Error::Config)?;
        let model = Self::new(config, vocab, meta.gel_count, meta.seed, dtype)?;
        model.store.assign(&ck.tensors_as(dtype)?)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, DType::F32)
    }
}

impl NoisePredictor for TouchModel {
    fn predict_noise(&self, x_t: &Tensor, t: &[usize], cond: &CondBatch) -> Result<Tensor> {
        self.dit.predict_noise(x_t, t, cond)
    }

    fn dtype(&self) -> DType {
        self.store.dtype()
    }
}
