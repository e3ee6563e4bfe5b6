use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use touchgen_core::data::{self, ppm, DataConfig};
use touchgen_core::diffusion::{make_schedule, sample};
use touchgen_core::eval::{
    default_grid, evaluate, fit_cttp, fit_gel_probe, run_ablation, train_diffusion, write_ablation_csv, write_loss_csv,
    write_report_csv,
};
use touchgen_core::text::Phase;
use touchgen_core::{CttpModel, ExperimentConfig, Image, TouchModel};

#[derive(Parser)]
#[command(name = "touchgen", version, about = "Text-conditioned tactile image generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic dataset to disk.
    GenData(GenData),
    /// Train the denoiser; writes diffusion.ckpt, loss.csv and config.json.
    TrainDiffusion(Experiment),
    /// Train the text-touch alignment model used for scoring.
    TrainCttp(TrainCttp),
    /// Train, then evaluate on the configured split.
    Pipeline(Experiment),
    /// Generate images for one caption and gel.
    Sample(Sample),
    /// Score a trained checkpoint against the reference split.
    Evaluate(Evaluate),
    /// One-axis-at-a-time ablation around a base config.
    Ablate(Ablate),
    /// Rank candidate textures for a tactile image.
    PredictTexture(PredictTexture),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    /// TOML or JSON data config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    gel_count: Option<usize>,
    #[arg(long)]
    seeds_per_combo: Option<usize>,
}

#[derive(Args, Clone)]
struct Experiment {
    /// TOML or JSON experiment config (a config.json echo works too).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the reduced single-CPU preset instead of the defaults.
    #[arg(long)]
    compact: bool,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    cfg_scale: Option<f64>,
    #[arg(long)]
    theta_t: Option<usize>,
    #[arg(long)]
    mechanism: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cttp: Option<PathBuf>,
    /// Any override key, e.g. `--set n_gs=6 --set layers=1-2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct TrainCttp {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Sample {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    texture: String,
    #[arg(long)]
    shape: String,
    #[arg(long, default_value_t = 0)]
    gel: usize,
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 43)]
    seed: u64,
    #[arg(long)]
    cfg_scale: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Evaluate {
    #[command(flatten)]
    exp: Experiment,
    /// Defaults to `<out>/diffusion.ckpt`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct Ablate {
    #[command(flatten)]
    exp: Experiment,
    /// Axis to sweep; repeatable. Uses the default grid unless `--values` follows.
    #[arg(long = "axis", required = true)]
    axes: Vec<String>,
    /// Comma-separated values, one list per `--axis` in order.
    #[arg(long = "values")]
    values: Vec<String>,
}

#[derive(Args)]
struct PredictTexture {
    #[arg(long)]
    cttp: PathBuf,
    /// Binary PPM image.
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    shape: String,
    /// Candidate textures, comma separated; defaults to the dataset's list.
    #[arg(long)]
    textures: Option<String>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    k: usize,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::TrainDiffusion(a) => train(&a).map(|_| ()),
        Command::TrainCttp(a) => train_cttp(a),
        Command::Pipeline(a) => {
            let cfg = train(&a)?;
            evaluate_run(&cfg, &cfg.output_dir.join("diffusion.ckpt"))
        }
        Command::Sample(a) => sample_cmd(a),
        Command::Evaluate(a) => {
            let cfg = experiment(&a.exp)?;
            let ck = a.checkpoint.unwrap_or_else(|| cfg.output_dir.join("diffusion.ckpt"));
            evaluate_run(&cfg, &ck)
        }
        Command::Ablate(a) => ablate(a),
        Command::PredictTexture(a) => predict_texture(a),
    }
}

fn experiment(a: &Experiment) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None if a.compact => ExperimentConfig::compact(),
        None => ExperimentConfig::default(),
    };
    if let Some(d) = &a.data {
        cfg.data_root = d.clone();
    }
    if let Some(o) = &a.out {
        cfg.output_dir = o.clone();
    }
    if let Some(p) = &a.cttp {
        cfg.cttp_checkpoint = Some(p.clone());
    }
    let flags = [
        ("steps", a.steps.map(|v| v.to_string())),
        ("cfg_scale", a.cfg_scale.map(|v| v.to_string())),
        ("theta_t", a.theta_t.map(|v| v.to_string())),
        ("mechanism", a.mechanism.clone()),
        ("seed", a.seed.map(|v| v.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.apply_override(k, &v)?;
        }
    }
    for kv in &a.overrides {
        let (k, v) = kv.split_once('=').with_context(|| format!("override {kv:?} is not KEY=VALUE"))?;
        cfg.apply_override(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn gen_data(a: GenData) -> Result<()> {
    let mut cfg: DataConfig = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| p.display().to_string())?;
            if p.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text)?
            } else {
                toml::from_str(&text)?
            }
        }
        None => DataConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.image_size {
        cfg.image_size = v;
    }
    if let Some(v) = a.gel_count {
        cfg.gel_count = v;
    }
    if let Some(v) = a.seeds_per_combo {
        cfg.seeds_per_combo = v;
    }
    let ds = data::generate_dataset(&cfg)?;
    data::write_dataset(&a.out, &ds.manifest, &ds.samples)?;
    println!("wrote {} samples ({} gels) to {}", ds.samples.len(), ds.manifest.gel_count, a.out.display());
    Ok(())
}

fn train(a: &Experiment) -> Result<ExperimentConfig> {
    let cfg = experiment(a)?;
    let dataset = data::load_dataset(&cfg.data_root)?;
    let out = &cfg.output_dir;
    let echo = cfg.write_echo(out)?;
    let outcome = train_diffusion(&cfg, &dataset)?;
    outcome.model.save(&out.join("diffusion.ckpt"))?;
    write_loss_csv(&out.join("loss.csv"), &outcome.losses)?;
    let last = outcome.losses.last().map(|l| l.loss).unwrap_or(f64::NAN);
    println!("trained {} steps, final loss {last:.5}; config echo {}", outcome.losses.len(), echo.display());
    Ok(cfg)
}

fn train_cttp(a: TrainCttp) -> Result<()> {
    let dataset = data::load_dataset(&a.data)?;
    let mut cfg = touchgen_core::CttpConfig::default();
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let (model, losses) = fit_cttp(&dataset, &cfg)?;
    model.save(&a.out)?;
    println!("cttp loss {:.4} -> {:.4}; saved {}", losses[0], losses.last().unwrap_or(&f64::NAN), a.out.display());
    Ok(())
}

fn load_cttp(cfg: &ExperimentConfig) -> Result<Option<CttpModel>> {
    match &cfg.cttp_checkpoint {
        Some(p) => Ok(Some(CttpModel::load(p)?)),
        None => Ok(None),
    }
}

/// Rows of generated images, each followed by a row of their references.
fn comparison_grid(generated: &[Image], references: &[&Image], columns: usize) -> Result<Image> {
    let first = generated.first().context("nothing to show")?;
    let pad = |row: &mut Vec<Image>| {
        while row.len() < columns {
            row.push(blank(first.height, first.width, first.channels));
        }
    };
    let mut tiles = Vec::new();
    for (g, r) in generated.chunks(columns).zip(references.chunks(columns)) {
        let mut top = g.to_vec();
        pad(&mut top);
        let mut bottom: Vec<Image> = r.iter().map(|i| (*i).clone()).collect();
        pad(&mut bottom);
        tiles.extend(top);
        tiles.extend(bottom);
    }
    Ok(ppm::grid(&tiles, columns)?)
}

fn blank(h: usize, w: usize, c: usize) -> Image {
    Image::filled(h, w, &vec![0.0; c])
}

fn evaluate_run(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<()> {
    let dataset = data::load_dataset(&cfg.data_root)?;
    let model = TouchModel::load(checkpoint)?;
    let cttp = load_cttp(cfg)?;
    let (report, generated, gels) = evaluate(&model, &dataset, cfg, cttp.as_ref())?;
    let (probe, probe_val) = fit_gel_probe(&dataset)?;
    let imgs: Vec<&Image> = generated.iter().collect();
    let gel_acc = probe.accuracy(&imgs, &gels);
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out)?;
    let csv = out.join("report.csv");
    write_report_csv(&csv, &report)?;
    let probe_json = serde_json::json!({ "probe_val_accuracy": probe_val, "gel_accuracy": gel_acc });
    std::fs::write(out.join("gel_probe.json"), serde_json::to_string_pretty(&probe_json)?)?;
    let refs = touchgen_core::eval::select_samples(dataset.contact_split(cfg.eval.split), cfg.eval.max_samples, cfg.seed);
    let n = generated.len().min(16);
    let ref_imgs: Vec<&Image> = refs.iter().take(n).map(|s| &s.image).collect();
    ppm::write(&out.join("samples.ppm"), &comparison_grid(&generated[..n], &ref_imgs, 8)?)?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into());
    println!(
        "ssim {:.4}  psnr {:.2}  lpips n/a  cttp {}  cttp(shuffled) {}  gel-probe {:.3}  ({} samples) -> {}",
        report.mean_ssim,
        report.mean_psnr,
        fmt(report.mean_cttp),
        fmt(report.mean_cttp_shuffled),
        gel_acc,
        report.rows.len(),
        csv.display()
    );
    Ok(())
}

fn sample_cmd(a: Sample) -> Result<()> {
    let model = TouchModel::load(&a.checkpoint)?;
    if a.count == 0 {
        bail!("--count must be positive");
    }
    let mut sampler = touchgen_core::SamplerConfig::default();
    if let Some(s) = a.cfg_scale {
        sampler.guidance.scale = s;
    }
    if let Some(s) = a.steps {
        sampler.steps = s;
    }
    let caption = model.caption(&a.shape, &a.texture)?;
    let requests: Vec<(&str, usize)> = (0..a.count).map(|_| (caption.as_str(), a.gel)).collect();
    let bundles = model.bundles(&requests, Phase::Sample)?;
    let schedule = make_schedule(model.config.dit.num_timesteps, Default::default())?;
    let seeds: Vec<u64> = (0..a.count as u64).map(|i| a.seed + i).collect();
    let size = model.config.dit.image_size;
    let ch = model.config.dit.in_channels;
    let codec = model.codec()?;
    let x = sample(&model, &schedule, &bundles, (size, size, ch), &sampler, &seeds, codec.as_ref(), None)?;
    let images: Vec<Image> = Image::unstack(&x)?.into_iter().map(Image::quantize8).collect();
    ppm::write(&a.out, &ppm::grid(&images, a.count.min(8))?)?;
    println!("{:?} gel {} x{} -> {}", caption, a.gel, a.count, a.out.display());
    Ok(())
}

fn ablate(a: Ablate) -> Result<()> {
    let base = experiment(&a.exp)?;
    if !a.values.is_empty() && a.values.len() != a.axes.len() {
        bail!("{} --values lists for {} --axis flags", a.values.len(), a.axes.len());
    }
    let mut grid = Vec::new();
    for (i, axis) in a.axes.iter().enumerate() {
        let values = match a.values.get(i) {
            Some(v) => v.split(',').map(|s| s.trim().to_string()).collect(),
            None => default_grid(axis, base.model.dit.depth)?,
        };
        grid.push((axis.clone(), values));
    }
    let dataset = data::load_dataset(&base.data_root)?;
    let cttp = load_cttp(&base)?;
    let (probe, _) = fit_gel_probe(&dataset)?;
    base.write_echo(&base.output_dir)?;
    let rows = run_ablation(&base, &grid, &dataset, cttp.as_ref(), Some(&probe))?;
    let path = base.output_dir.join("ablation.csv");
    write_ablation_csv(&path, &rows)?;
    for r in &rows {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        println!(
            "{:>10}={:<8} {:5} ssim {} psnr {} cttp {} gel {} {}",
            r.axis,
            r.value,
            r.status,
            f(r.mean_ssim),
            f(r.mean_psnr),
            f(r.mean_cttp),
            f(r.gel_accuracy),
            r.error
        );
    }
    println!("-> {}", path.display());
    Ok(())
}

fn predict_texture(a: PredictTexture) -> Result<()> {
    let model = CttpModel::load(&a.cttp)?;
    let image = ppm::read(&a.image)?;
    let textures: Vec<String> = match (&a.textures, &a.data) {
        (Some(t), _) => t.split(',').map(|s| s.trim().to_string()).collect(),
        (None, Some(d)) => data::read_manifest(d)?.textures,
        (None, None) => bail!("pass --textures or --data"),
    };
    let p = model.predict_texture(&image, &textures, &a.shape, a.k)?;
    for (i, (t, s)) in p.top.iter().enumerate() {
        println!("{}. {t} ({s:.4})", i + 1);
    }
    println!("least relevant: {} ({:.4})", p.least.0, p.least.1);
    Ok(())
}
