//! Contrastive text-touch dual encoder used as an alignment metric.

pub mod encoders;
pub mod loss;

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use encoders::{HashedTextEncoder, TactileEncoder, TactileEncoderConfig};
pub use loss::{cosine, info_nce_loss, l2_normalize, DEFAULT_TEMPERATURE};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::ParamStore;
use crate::optim::{OptimConfig, Optimizer};
use crate::rng;
use crate::text::build_caption;

pub const CHECKPOINT_KIND: &str = "cttp";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CttpConfig {
    pub encoder: TactileEncoderConfig,
    pub temperature: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    pub seed: u64,
}

impl Default for CttpConfig {
    fn default() -> Self {
        Self {
            encoder: TactileEncoderConfig::default(),
            temperature: DEFAULT_TEMPERATURE,
            epochs: 30,
            batch_size: 64,
            optim: OptimConfig {
                lr: 1e-3,
                weight_decay: 0.01,
                warmup_steps: 50,
                grad_clip: 1.0,
                ..Default::default()
            },
            seed: 43,
        }
    }
}

pub struct CttpModel {
    pub config: CttpConfig,
    pub store: ParamStore,
    pub tactile: TactileEncoder,
    pub text: HashedTextEncoder,
}

/// Ranked textures for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct TexturePrediction {
    /// Best first.
    pub top: Vec<(String, f64)>,
    /// The lowest-scoring candidate.
    pub least: (String, f64),
}

impl CttpModel {
    fn build(config: CttpConfig, text: HashedTextEncoder) -> Result<Self> {
        if text.dim != config.encoder.embed_dim {
            return Err(Error::Config(format!(
                "text dim {} vs tactile embed dim {}",
                text.dim, config.encoder.embed_dim
            )));
        }
        if !(config.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {}", config.temperature)));
        }
        let mut store = ParamStore::new(config.seed, DType::F32);
        let tactile = TactileEncoder::new(&mut store, config.encoder.clone())?;
        Ok(Self {
            config,
            store,
            tactile,
            text,
        })
    }

    pub fn embed_images(&self, images: &[&Image]) -> Result<Tensor> {
        let x = Image::stack(images, &Device::Cpu, DType::F32)?;
        self.tactile.forward(&x)
    }

    pub fn embed_texts(&self, texts: &[&str]) -> Result<Tensor> {
        self.text.embed_batch(texts, DType::F32)
    }

    /// Cosine similarity between each image and the text at the same index.
    pub fn score_pairs(&self, images: &[&Image], texts: &[&str]) -> Result<Vec<f64>> {
        if images.len() != texts.len() {
            return Err(Error::Input(format!("{} images vs {} texts", images.len(), texts.len())));
        }
        let mut out = Vec::with_capacity(images.len());
        for (chunk_i, chunk_t) in images.chunks(64).zip(texts.chunks(64)) {
            let a = self.embed_images(chunk_i)?.to_vec2::<f32>()?;
            let b = self.embed_texts(chunk_t)?.to_vec2::<f32>()?;
            for (x, y) in a.iter().zip(&b) {
                out.push(cosine(x, y)?);
            }
        }
        Ok(out)
    }

    pub fn score(&self, image: &Image, text: &str) -> Result<f64> {
        Ok(self.score_pairs(&[image], &[text])?[0])
    }

    /// Score every candidate texture under the caption template and return the
    /// `k` best plus the least relevant.
    pub fn predict_texture(&self, image: &Image, textures: &[String], shape_caption: &str, k: usize) -> Result<TexturePrediction> {
        if textures.is_empty() {
            return Err(Error::Input("texture vocabulary is empty".into()));
        }
        if k == 0 || k > textures.len() {
            return Err(Error::Input(format!("k must be in 1..={}, got {k}", textures.len())));
        }
        let enc = &self.config.encoder;
        if (image.height, image.width, image.channels) != (enc.image_size, enc.image_size, enc.channels) {
            return Err(Error::Input(format!(
                "expected a single {0}x{0}x{1} frame, got {2}x{3}x{4}",
                enc.image_size, enc.channels, image.height, image.width, image.channels
            )));
        }
        let captions = textures
            .iter()
            .map(|t| build_caption(shape_caption, t))
            .collect::<Result<Vec<_>>>()?;
        let img = self.embed_images(&[image])?.to_vec2::<f32>()?.remove(0);
        let refs: Vec<&str> = captions.iter().map(String::as_str).collect();
        let txt = self.embed_texts(&refs)?.to_vec2::<f32>()?;
        let mut scored = textures
            .iter()
            .zip(&txt)
            .map(|(t, e)| Ok((t.clone(), cosine(&img, e)?)))
            .collect::<Result<Vec<_>>>()?;
        // Stable sort keeps duplicates in input order.
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        let least = scored.last().cloned().expect("non-empty");
        scored.truncate(k);
        Ok(TexturePrediction { top: scored, least })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::new(
            CHECKPOINT_KIND,
            serde_json::to_value(&self.config)?,
            serde_json::to_value(&self.text)?,
            self.store.snapshot()?,
        ))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let config: CttpConfig = serde_json::from_value(ck.config.clone())?;
        let text: HashedTextEncoder = serde_json::from_value(ck.meta.clone())?;
        let model = Self::build(config, text)?;
        model.store.assign(&ck.tensors_as(DType::F32)?)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Train the tactile tower against the frozen text tower. Returns the model
/// and the mean loss of every epoch.
pub fn train_cttp(images: &[&Image], captions: &[String], config: &CttpConfig) -> Result<(CttpModel, Vec<f64>)> {
    if images.len() != captions.len() || images.is_empty() {
        return Err(Error::Data(format!("{} images vs {} captions", images.len(), captions.len())));
    }
    if config.batch_size < 2 {
        log::warn!("contrastive batch size {} has no negatives; the loss is constant 0", config.batch_size);
    }
    let text = HashedTextEncoder::fit(captions.iter().map(String::as_str), config.encoder.embed_dim, config.seed);
    let model = CttpModel::build(config.clone(), text)?;
    let text_emb: Vec<Vec<f32>> = captions.iter().map(|c| model.text.embed(c)).collect();
    let mut opt = Optimizer::new(model.store.vars(), config.optim)?;
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut r = rng::stream(config.seed, 0xc77);
    let bs = config.batch_size.max(1);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut r);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(bs) {
            let imgs: Vec<&Image> = chunk.iter().map(|&i| images[i]).collect();
            let tac = model.embed_images(&imgs)?;
            let tex_data: Vec<f32> = chunk.iter().flat_map(|&i| text_emb[i].iter().copied()).collect();
            let tex = Tensor::from_vec(tex_data, (chunk.len(), model.text.dim), &Device::Cpu)?;
            let loss = info_nce_loss(&tac, &tex, config.temperature)?;
            total += loss.to_scalar::<f32>()? as f64;
            batches += 1;
            opt.backward_step(&loss)?;
        }
        let mean = total / batches as f64;
        log::info!("cttp epoch {epoch}: loss {mean:.4}");
        epoch_losses.push(mean);
    }
    Ok((model, epoch_losses))
}
