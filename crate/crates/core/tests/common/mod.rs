#![allow(dead_code)]

use candle_core::{DType, Tensor};
use touchgen_core::text::{ConditionToggles, Phase, ThetaGate, Vocab};
use touchgen_core::{ConditionBundle, Mechanism, ModelConfig, TouchModel};

pub const CAPTIONS: [&str; 4] = [
    "the touch is rough and the object is a ring",
    "the touch is smooth and the object is a bar",
    "the touch is knitted and the object is a disk",
    "the touch is bumpy and the object is a cross",
];

pub fn vocab(max_tokens: usize) -> Vocab {
    Vocab::from_texts(CAPTIONS.iter().copied(), max_tokens)
}

/// A very small model over `size × size × 3` images.
pub fn tiny_config(mechanism: Mechanism, width: usize, depth: usize, size: usize) -> ModelConfig {
    let mut c = ModelConfig::default();
    c.dit.image_size = size;
    c.dit.patch_size = 2;
    c.dit.width = width;
    c.dit.depth = depth;
    c.dit.heads = 2;
    c.dit.cond_dim = 8;
    c.dit.freq_dim = 8;
    c.dit.modulation_hidden = width;
    c.dit.mechanism = mechanism;
    c.dit.gel_prompt_layers = (1..=depth).collect();
    c.toggles = ConditionToggles::ALL;
    c.gate = ThetaGate::new(600);
    c.max_tokens = 16;
    c
}

pub fn tiny_model(config: ModelConfig, dtype: DType) -> TouchModel {
    TouchModel::new(config, vocab(16), 3, 43, dtype).unwrap()
}

/// Replace every parameter with N(0, std²) draws so zero-initialised paths
/// carry signal.
pub fn randomize(model: &TouchModel, std: f64, seed: u64) {
    let mut r = touchgen_core::rng::stream(seed, 1);
    for var in model.store.named_vars().values() {
        let shape = var.as_tensor().dims().to_vec();
        let n: usize = shape.iter().product();
        let v: Vec<f64> = touchgen_core::rng::normal_vec_f64(&mut r, n).into_iter().map(|x| x * std).collect();
        let t = Tensor::from_vec(v, shape, var.as_tensor().device())
            .unwrap()
            .to_dtype(var.as_tensor().dtype())
            .unwrap();
        var.set(&t).unwrap();
    }
}

pub fn bundles(model: &TouchModel, requests: &[(&str, usize)]) -> Vec<ConditionBundle> {
    model.bundles(requests, Phase::Sample).unwrap()
}

pub fn to_vec(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1::<f64>().unwrap()
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    to_vec(a).iter().zip(to_vec(b)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
