//! Two-stage training: prepare contact frames and captions, then train the
//! denoiser with the time-gated condition.

use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::probe::GelProbe;
use crate::cttp::{train_cttp, CttpConfig, CttpModel};
use crate::data::{load_dataset, Dataset, Split, TactileSample};
use crate::diffusion::{make_schedule, training_loss, Codec};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::optim::Optimizer;
use crate::rng;
use crate::text::{build_caption, CondBatch, Phase, Vocab};
use crate::touch::TouchModel;

/// Stage-1 output: encoded contact frames with their condition requests.
pub struct PreparedData {
    pub ids: Vec<String>,
    /// `(N, H, W, C)` latents.
    pub latents: Tensor,
    pub captions: Vec<String>,
    pub gel_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

pub struct TrainOutcome {
    pub model: TouchModel,
    pub losses: Vec<LossRecord>,
}

pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub config_echo: PathBuf,
    pub final_loss: f64,
}

/// Every caption the toggles can produce for the dataset's vocabulary of
/// shapes and textures.
pub fn build_vocab(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<Vocab> {
    let m = &dataset.manifest;
    let mut texts = Vec::new();
    for s in &m.shapes {
        for t in &m.textures {
            texts.push(cfg.model.toggles.caption(s, t)?);
        }
    }
    Ok(Vocab::from_texts(texts.iter().map(String::as_str), cfg.model.max_tokens))
}

/// Stage 1: keep contact frames, encode them and build their captions.
pub fn prepare(samples: &[&TactileSample], model: &TouchModel, codec: &dyn Codec) -> Result<PreparedData> {
    let contact: Vec<&TactileSample> = samples.iter().copied().filter(|s| s.contact).collect();
    if contact.is_empty() {
        return Err(Error::Data("no contact frames to train on".into()));
    }
    let images: Vec<&Image> = contact.iter().map(|s| &s.image).collect();
    let x = Image::stack(&images, &Device::Cpu, model.store.dtype())?;
    let latents = codec.encode(&x)?;
    let captions = contact
        .iter()
        .map(|s| model.caption(&s.shape_caption, &s.texture_caption))
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedData {
        ids: (0..contact.len()).map(|i| format!("{i}")).collect(),
        latents,
        captions,
        gel_ids: contact.iter().map(|s| s.gel_id).collect(),
    })
}

/// Stage 2 on an in-memory dataset.
pub fn train_diffusion(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut mcfg = cfg.model.clone();
    mcfg.dit.image_size = dataset.manifest.image_size;
    let vocab = build_vocab(dataset, cfg)?;
    let model = TouchModel::new(mcfg, vocab, dataset.manifest.gel_count, cfg.seed, DType::F32)?;
    let codec = model.codec()?;
    let train = dataset.split(Split::Train);
    let data = prepare(&train, &model, codec.as_ref())?;
    let schedule = make_schedule(model.config.dit.num_timesteps, cfg.schedule)?;
    let big_t = schedule.len();

    let mut opt = Optimizer::new(model.store.vars(), cfg.optim)?;
    let mut r = rng::stream(cfg.seed, 0x7a1);
    let n = data.captions.len();
    let b = cfg.train.batch_size;
    let (_, h, w, c) = data.latents.dims4()?;
    let mut losses = Vec::with_capacity(cfg.train.steps);
    for step in 0..cfg.train.steps {
        let idx: Vec<u32> = (0..b).map(|_| r.random_range(0..n) as u32).collect();
        let t: Vec<usize> = (0..b).map(|_| r.random_range(0..big_t)).collect();
        let drop: Vec<bool> = (0..b).map(|_| r.random::<f64>() < model.config.cfg_drop_prob).collect();
        let eps = rng::normal_vec(&mut r, b * h * w * c);
        let eps = Tensor::from_vec(eps, (b, h, w, c), &Device::Cpu)?;
        let x0 = data.latents.index_select(&Tensor::new(idx.as_slice(), &Device::Cpu)?, 0)?;
        let requests: Vec<(&str, usize)> = idx
            .iter()
            .map(|&i| (data.captions[i as usize].as_str(), data.gel_ids[i as usize]))
            .collect();
        let bundles = model.bundles(&requests, Phase::Train)?;
        let cond = CondBatch::from_bundles(&bundles, &t, &drop, big_t)?;
        let loss = training_loss(&model, &schedule, &x0, &cond, &t, &eps)?;
        let value = loss.to_scalar::<f32>()? as f64;
        let stats = opt.backward_step(&loss)?;
        if cfg.train.log_every > 0 && step % cfg.train.log_every == 0 {
            log::info!("step {step}: loss {value:.5} lr {:.2e} |g| {:.3}", stats.lr, stats.grad_norm);
        }
        losses.push(LossRecord {
            step,
            loss: value,
            lr: stats.lr,
            grad_norm: stats.grad_norm,
        });
    }
    Ok(TrainOutcome { model, losses })
}

pub fn write_loss_csv(path: &Path, losses: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for r in losses {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Sliding-window means of `values`.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    values.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

/// Load the dataset, train, and write checkpoint, loss curve and config echo
/// into `cfg.output_dir`.
pub fn train_pipeline(cfg: &ExperimentConfig) -> Result<TrainArtifacts> {
    let dataset = load_dataset(&cfg.data_root)?;
    let out = &cfg.output_dir;
    let config_echo = cfg.write_echo(out)?;
    let outcome = train_diffusion(cfg, &dataset)?;
    let checkpoint = out.join("diffusion.ckpt");
    outcome.model.save(&checkpoint)?;
    let loss_csv = out.join("loss.csv");
    write_loss_csv(&loss_csv, &outcome.losses)?;
    Ok(TrainArtifacts {
        checkpoint,
        loss_csv,
        config_echo,
        final_loss: outcome.losses.last().map(|l| l.loss).unwrap_or(f64::NAN),
    })
}

/// Fit the gel-status probe on every training frame (contact or not) and
/// report its accuracy on the validation split.
pub fn fit_gel_probe(dataset: &Dataset) -> Result<(GelProbe, f64)> {
    let train = dataset.split(Split::Train);
    let imgs: Vec<&Image> = train.iter().map(|s| &s.image).collect();
    let labels: Vec<usize> = train.iter().map(|s| s.gel_id).collect();
    let probe = GelProbe::train(&imgs, &labels, dataset.manifest.gel_count, PROBE_EPOCHS, PROBE_LR)?;
    let val = dataset.split(Split::Val);
    let vimgs: Vec<&Image> = val.iter().map(|s| &s.image).collect();
    let vlabels: Vec<usize> = val.iter().map(|s| s.gel_id).collect();
    let acc = probe.accuracy(&vimgs, &vlabels);
    Ok((probe, acc))
}

const PROBE_EPOCHS: usize = 500;
const PROBE_LR: f64 = 0.5;

/// Train the alignment model on the training contact frames and their full
/// captions.
pub fn fit_cttp(dataset: &Dataset, config: &CttpConfig) -> Result<(CttpModel, Vec<f64>)> {
    let train = dataset.contact_split(Split::Train);
    let imgs: Vec<&Image> = train.iter().map(|s| &s.image).collect();
    let captions = train
        .iter()
        .map(|s| build_caption(&s.shape_caption, &s.texture_caption))
        .collect::<Result<Vec<_>>>()?;
    train_cttp(&imgs, &captions, config)
}
