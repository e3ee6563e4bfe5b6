use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{content_id, ExperimentConfig};
use super::metrics::{psnr, ssim};
use crate::cttp::CttpModel;
use crate::data::{Dataset, TactileSample};
use crate::diffusion::{make_schedule, sample};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng;
use crate::text::{build_caption, Phase};
use crate::touch::TouchModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub index: usize,
    pub caption: String,
    pub gel_id: usize,
    pub seed: u64,
    pub ssim: f64,
    pub psnr: f64,
    pub cttp: Option<f64>,
    /// CTTP of the same image against another sample's caption.
    pub cttp_shuffled: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<SampleMetrics>,
    pub mean_ssim: f64,
    pub mean_psnr: f64,
    pub mean_cttp: Option<f64>,
    pub mean_cttp_shuffled: Option<f64>,
    pub config_hash: String,
    /// Content id of the evaluated checkpoint (or of the report inputs).
    pub content_id: String,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Seeded subset of a split used for evaluation, in a stable order.
pub fn select_samples<'a>(samples: Vec<&'a TactileSample>, max: Option<usize>, seed: u64) -> Vec<&'a TactileSample> {
    let mut s = samples;
    if let Some(m) = max {
        if m < s.len() {
            let mut r = rng::stream(seed, 0xe5a1);
            s.shuffle(&mut r);
            s.truncate(m);
        }
    }
    s
}

/// One generated image per sample; sample `i` uses seed `base_seed + i`.
pub fn generate_for(model: &TouchModel, samples: &[&TactileSample], cfg: &ExperimentConfig) -> Result<Vec<Image>> {
    let schedule = make_schedule(model.config.dit.num_timesteps, cfg.schedule)?;
    let codec = model.codec()?;
    let size = model.config.dit.image_size;
    let ch = model.config.dit.in_channels;
    let mut out = Vec::with_capacity(samples.len());
    let bs = cfg.eval.batch_size.max(1);
    for (ci, chunk) in samples.chunks(bs).enumerate() {
        let captions = chunk
            .iter()
            .map(|s| model.caption(&s.shape_caption, &s.texture_caption))
            .collect::<Result<Vec<_>>>()?;
        let requests: Vec<(&str, usize)> = captions.iter().map(String::as_str).zip(chunk.iter().map(|s| s.gel_id)).collect();
        let bundles = model.bundles(&requests, Phase::Sample)?;
        let seeds: Vec<u64> = (0..chunk.len()).map(|i| cfg.seed + (ci * bs + i) as u64).collect();
        let x = sample(model, &schedule, &bundles, (size, size, ch), &cfg.sampler, &seeds, codec.as_ref(), None)?;
        out.extend(Image::unstack(&x)?.into_iter().map(Image::quantize8));
    }
    Ok(out)
}

/// Score generated images against references and true captions. With a CTTP
/// model the shuffled-caption control is computed from a seeded permutation.
pub fn score(
    generated: &[Image],
    references: &[&TactileSample],
    cttp: Option<&CttpModel>,
    seed: u64,
    config_hash: String,
    content: String,
) -> Result<MetricReport> {
    if generated.len() != references.len() {
        return Err(Error::Input(format!("{} generated vs {} references", generated.len(), references.len())));
    }
    let captions = references
        .iter()
        .map(|s| build_caption(&s.shape_caption, &s.texture_caption))
        .collect::<Result<Vec<_>>>()?;
    let (cttp_true, cttp_shuf) = match cttp {
        Some(m) => {
            let mut perm: Vec<usize> = (0..captions.len()).collect();
            perm.shuffle(&mut rng::stream(seed, 0x5f1e));
            let imgs: Vec<&Image> = generated.iter().collect();
            let t: Vec<&str> = captions.iter().map(String::as_str).collect();
            let s: Vec<&str> = perm.iter().map(|&j| captions[j].as_str()).collect();
            (Some(m.score_pairs(&imgs, &t)?), Some(m.score_pairs(&imgs, &s)?))
        }
        None => {
            log::warn!("no CTTP model available; CTTP columns are skipped");
            (None, None)
        }
    };
    let mut rows = Vec::with_capacity(generated.len());
    for (i, (g, r)) in generated.iter().zip(references).enumerate() {
        rows.push(SampleMetrics {
            index: i,
            caption: captions[i].clone(),
            gel_id: r.gel_id,
            seed: seed + i as u64,
            ssim: ssim(g, &r.image)?,
            psnr: psnr(g, &r.image)?,
            cttp: cttp_true.as_ref().map(|v| v[i]),
            cttp_shuffled: cttp_shuf.as_ref().map(|v| v[i]),
        });
    }
    Ok(MetricReport {
        mean_ssim: mean(rows.iter().map(|r| r.ssim)),
        mean_psnr: mean(rows.iter().map(|r| r.psnr)),
        mean_cttp: cttp_true.as_ref().map(|v| mean(v.iter().copied())),
        mean_cttp_shuffled: cttp_shuf.as_ref().map(|v| mean(v.iter().copied())),
        rows,
        config_hash,
        content_id: content,
    })
}

/// Generate for the configured split and score against the paired references.
pub fn evaluate(
    model: &TouchModel,
    dataset: &Dataset,
    cfg: &ExperimentConfig,
    cttp: Option<&CttpModel>,
) -> Result<(MetricReport, Vec<Image>, Vec<usize>)> {
    let samples = select_samples(dataset.contact_split(cfg.eval.split), cfg.eval.max_samples, cfg.seed);
    if samples.is_empty() {
        return Err(Error::Data(format!("no contact frames in the {:?} split", cfg.eval.split)));
    }
    let generated = generate_for(model, &samples, cfg)?;
    let id = content_id(&model.to_checkpoint()?.to_bytes()?);
    let report = score(&generated, &samples, cttp, cfg.seed, cfg.hash()?, id)?;
    let gels = samples.iter().map(|s| s.gel_id).collect();
    Ok((report, generated, gels))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "n/a".into())
}

/// Per-sample rows followed by a `mean` row. LPIPS is reserved and reported as `n/a`.
pub fn write_report_csv(path: &Path, report: &MetricReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    w.write_record(["index", "caption", "gel_id", "seed", "ssim", "psnr", "lpips", "cttp", "cttp_shuffled"])?;
    for r in &report.rows {
        w.write_record([
            r.index.to_string(),
            r.caption.clone(),
            r.gel_id.to_string(),
            r.seed.to_string(),
            r.ssim.to_string(),
            r.psnr.to_string(),
            "n/a".into(),
            opt(r.cttp),
            opt(r.cttp_shuffled),
        ])?;
    }
    w.write_record([
        "mean".to_string(),
        String::new(),
        String::new(),
        String::new(),
        report.mean_ssim.to_string(),
        report.mean_psnr.to_string(),
        "n/a".into(),
        opt(report.mean_cttp),
        opt(report.mean_cttp_shuffled),
    ])?;
    w.flush().map_err(|e| Error::io(path, e))?;
    let meta = path.with_extension("meta.json");
    let body = serde_json::json!({
        "config_hash": report.config_hash,
        "content_id": report.content_id,
        "mean_ssim": report.mean_ssim,
        "mean_psnr": report.mean_psnr,
        "mean_cttp": report.mean_cttp,
        "mean_cttp_shuffled": report.mean_cttp_shuffled,
    });
    std::fs::write(&meta, serde_json::to_string_pretty(&body)?).map_err(|e| Error::io(&meta, e))?;
    Ok(())
}
