use std::hint::black_box;

use candle_core::{DType, Device, Tensor};
use criterion::{criterion_group, criterion_main, Criterion};
use touchgen_core::cttp::info_nce_loss;
use touchgen_core::data::{DataConfig, SyntheticGenerator};
use touchgen_core::diffusion::{make_schedule, sample, training_loss, IdentityCodec, ScheduleKind};
use touchgen_core::eval::ssim;
use touchgen_core::text::{CondBatch, Phase, Vocab};
use touchgen_core::{ExperimentConfig, Image, Mechanism, NoisePredictor, Optimizer, TouchModel};

const CAPTION: &str = "the touch is rough and the object is a ring";

fn model(mechanism: Mechanism) -> TouchModel {
    let mut cfg = ExperimentConfig::compact();
    cfg.model.dit.mechanism = mechanism;
    let vocab = Vocab::from_texts([CAPTION], cfg.model.max_tokens);
    TouchModel::new(cfg.model, vocab, 3, 43, DType::F32).unwrap()
}

fn batch(b: usize) -> Tensor {
    Tensor::randn(0f32, 1.0, (b, 32, 32, 3), &Device::Cpu).unwrap()
}

fn denoiser(c: &mut Criterion) {
    let b = 16;
    let t: Vec<usize> = (0..b).map(|i| i * 60).collect();
    let x = batch(b);
    for mechanism in Mechanism::ALL {
        let m = model(mechanism);
        let req = vec![(CAPTION, 1); b];
        let bundles = m.bundles(&req, Phase::Train).unwrap();
        let cond = CondBatch::from_bundles(&bundles, &t, &vec![false; b], 1000).unwrap();
        c.bench_function(&format!("forward/{mechanism}/b16"), |bench| {
            bench.iter(|| black_box(m.predict_noise(&x, &t, &cond).unwrap()))
        });
    }

    let m = model(Mechanism::Cross);
    let schedule = make_schedule(1000, ScheduleKind::Linear).unwrap();
    let mut opt = Optimizer::new(m.store.vars(), ExperimentConfig::compact().optim).unwrap();
    let eps = batch(b);
    let req = vec![(CAPTION, 1); b];
    c.bench_function("train_step/cross/b16", |bench| {
        bench.iter(|| {
            let bundles = m.bundles(&req, Phase::Train).unwrap();
            let cond = CondBatch::from_bundles(&bundles, &t, &vec![false; b], 1000).unwrap();
            let loss = training_loss(&m, &schedule, &x, &cond, &t, &eps).unwrap();
            black_box(opt.backward_step(&loss).unwrap())
        })
    });
}

fn sampler(c: &mut Criterion) {
    let m = model(Mechanism::Cross);
    let schedule = make_schedule(1000, ScheduleKind::Linear).unwrap();
    let mut cfg = touchgen_core::SamplerConfig::default();
    cfg.steps = 10;
    let bundles = m.bundles(&[(CAPTION, 0); 4], Phase::Sample).unwrap();
    let mut g = c.benchmark_group("sample");
    g.sample_size(10);
    g.bench_function("ddim10/cfg/b4", |bench| {
        bench.iter(|| black_box(sample(&m, &schedule, &bundles, (32, 32, 3), &cfg, &[1, 2, 3, 4], &IdentityCodec, None).unwrap()))
    });
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let gen = SyntheticGenerator::new(32, 3).unwrap();
    let a = gen.generate_sample(0, Some(0), 0, 1).unwrap().image;
    let b = gen.generate_sample(1, Some(1), 1, 2).unwrap().image;
    c.bench_function("ssim/32x32x3", |bench| bench.iter(|| black_box(ssim(&a, &b).unwrap())));

    let x = Tensor::randn(0f32, 1.0, (64, 64), &Device::Cpu).unwrap();
    let y = Tensor::randn(0f32, 1.0, (64, 64), &Device::Cpu).unwrap();
    c.bench_function("info_nce/b64", |bench| bench.iter(|| black_box(info_nce_loss(&x, &y, 0.07).unwrap())));
}

fn data(c: &mut Criterion) {
    let cfg = DataConfig::default();
    let gen = SyntheticGenerator::new(cfg.image_size, cfg.gel_count).unwrap();
    let mut seed = 0u64;
    c.bench_function("render/contact_frame", |bench| {
        bench.iter(|| {
            seed += 1;
            black_box::<Image>(gen.generate_sample(2, Some(3), 1, seed).unwrap().image)
        })
    });
}

criterion_group!(benches, denoiser, sampler, metrics, data);
criterion_main!(benches);
