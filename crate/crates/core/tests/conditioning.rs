mod common;

use std::collections::BTreeSet;

use candle_core::{DType, Device, Tensor};
use common::{bundles, max_abs_diff, randomize, tiny_config, tiny_model, CAPTIONS};
use rand::Rng as _;
use touchgen_core::diffusion::NoisePredictor;
use touchgen_core::dit::ForwardTrace;
use touchgen_core::text::{CondBatch, ThetaGate};
use touchgen_core::{rng, ConditionBundle, Mechanism, TouchModel};

fn noise(b: usize, size: usize, seed: u64) -> Tensor {
    let mut r = rng::stream(seed, 3);
    Tensor::from_vec(rng::normal_vec(&mut r, b * size * size * 3), (b, size, size, 3), &Device::Cpu).unwrap()
}

fn predict(model: &TouchModel, x: &Tensor, t: &[usize], b: &[ConditionBundle]) -> Tensor {
    let cond = CondBatch::from_bundles(b, t, &vec![false; b.len()], 1000).unwrap();
    model.predict_noise(x, t, &cond).unwrap()
}

#[test]
fn condition_length_follows_the_shape_law() {
    let depth = 4;
    let layers: BTreeSet<usize> = [2, 4].into_iter().collect();
    let mut r = rng::stream(43, 5);
    for mechanism in Mechanism::ALL {
        for theta in [0usize, 600, 1000] {
            for n_gs in [1usize, 2, 4, 6, 8] {
                let mut cfg = tiny_config(mechanism, 16, depth, 8);
                cfg.n_gs = n_gs;
                cfg.gate = ThetaGate::new(theta);
                cfg.dit.gel_prompt_layers = layers.clone();
                let model = tiny_model(cfg, DType::F32);
                let mut pairs = 0;
                while pairs < 1000 {
                    let b = 10;
                    let t: Vec<usize> = (0..b).map(|_| r.random_range(0..1000)).collect();
                    let req: Vec<(&str, usize)> = (0..b).map(|i| (CAPTIONS[i % 4], i % 3)).collect();
                    let lens: Vec<usize> = req.iter().map(|(c, _)| model.vocab.tokenize(c).len()).collect();
                    let bs = bundles(&model, &req);
                    let cond = CondBatch::from_bundles(&bs, &t, &vec![false; b], 1000).unwrap();
                    let mut trace = ForwardTrace::default();
                    model.dit.forward_traced(&noise(b, 8, 1), &t, &cond, &mut trace).unwrap();
                    assert_eq!(trace.blocks.len(), depth);
                    for bt in &trace.blocks {
                        let gets_gel = layers.contains(&(bt.block + 1));
                        for i in 0..b {
                            let expect = n_gs * usize::from(t[i] >= theta && gets_gel) + lens[i];
                            assert_eq!(bt.cond_len[i], expect, "{mechanism} θ={theta} n_gs={n_gs} t={} block {}", t[i], bt.block);
                            let attn = match mechanism {
                                Mechanism::Joint => expect + 16,
                                _ => expect,
                            };
                            assert_eq!(bt.attn_len[i], attn);
                            pairs += 1;
                        }
                        assert_eq!(bt.out_tokens, 16);
                    }
                }
            }
        }
    }
}

#[test]
fn joint_attention_sees_image_and_condition_tokens() {
    let mut cfg = tiny_config(Mechanism::Joint, 128, 6, 32);
    cfg.dit.heads = 4;
    cfg.n_gs = 4;
    let model = tiny_model(cfg, DType::F32);
    let bs = bundles(&model, &[(CAPTIONS[0], 1)]);
    let l = bs[0].obj_len();
    let cond = CondBatch::from_bundles(&bs, &[800], &[false], 1000).unwrap();
    let mut trace = ForwardTrace::default();
    let out = model.dit.forward_traced(&noise(1, 32, 2), &[800], &cond, &mut trace).unwrap();
    assert_eq!(out.eps.dims(), &[1, 32, 32, 3]);
    for bt in &trace.blocks {
        assert_eq!(bt.attn_len[0], 256 + 4 + l);
        assert_eq!(bt.out_tokens, 256);
    }
}

#[test]
fn conditioning_is_inert_at_initialisation() {
    for mechanism in Mechanism::ALL {
        let model = tiny_model(tiny_config(mechanism, 16, 2, 8), DType::F32);
        let x = noise(2, 8, 4);
        let t = [900, 100];
        let a = predict(&model, &x, &t, &bundles(&model, &[(CAPTIONS[0], 0), (CAPTIONS[1], 1)]));
        let b = predict(&model, &x, &t, &bundles(&model, &[(CAPTIONS[3], 2), (CAPTIONS[2], 0)]));
        assert_eq!(common::to_vec(&a), common::to_vec(&b), "{mechanism}");
        let head = model.dit.head_only(&x, &t).unwrap().eps;
        assert_eq!(common::to_vec(&a), common::to_vec(&head), "{mechanism}");
    }
}

#[test]
fn trained_like_parameters_make_conditioning_matter() {
    for mechanism in Mechanism::ALL {
        let model = tiny_model(tiny_config(mechanism, 16, 2, 8), DType::F32);
        randomize(&model, 0.3, 11);
        let x = noise(1, 8, 4);
        let a = predict(&model, &x, &[900], &bundles(&model, &[(CAPTIONS[0], 0)]));
        let b = predict(&model, &x, &[900], &bundles(&model, &[(CAPTIONS[1], 0)]));
        let c = predict(&model, &x, &[900], &bundles(&model, &[(CAPTIONS[0], 1)]));
        assert!(max_abs_diff(&a, &b) > 1e-4, "{mechanism}: caption ignored");
        assert!(max_abs_diff(&a, &c) > 1e-4, "{mechanism}: gel ignored");
    }
}

#[test]
fn cross_attention_is_invariant_to_condition_row_order() {
    let model = tiny_model(tiny_config(Mechanism::Cross, 16, 2, 8), DType::F64);
    randomize(&model, 0.3, 12);
    let bs = bundles(&model, &[(CAPTIONS[2], 1)]);
    let l = bs[0].obj_len();
    let perm: Vec<u32> = (0..l as u32).rev().collect();
    let mut shuffled = bs[0].clone();
    shuffled.c_obj = bs[0].c_obj.index_select(&Tensor::new(perm.as_slice(), &Device::Cpu).unwrap(), 0).unwrap();
    let x = noise(1, 8, 5).to_dtype(DType::F64).unwrap();
    let a = predict(&model, &x, &[700], &bs);
    let b = predict(&model, &x, &[700], &[shuffled]);
    assert!(max_abs_diff(&a, &b) < 1e-10);
}

#[test]
fn no_gel_layers_means_gel_id_is_ignored() {
    for mechanism in Mechanism::ALL {
        let mut cfg = tiny_config(mechanism, 16, 2, 8);
        cfg.dit.gel_prompt_layers = BTreeSet::new();
        let model = tiny_model(cfg, DType::F32);
        randomize(&model, 0.3, 13);
        let x = noise(1, 8, 6);
        let outs: Vec<Vec<f64>> = (0..3)
            .map(|g| common::to_vec(&predict(&model, &x, &[950], &bundles(&model, &[(CAPTIONS[0], g)]))))
            .collect();
        assert_eq!(outs[0], outs[1], "{mechanism}");
        assert_eq!(outs[0], outs[2], "{mechanism}");
    }
}

#[test]
fn below_the_gate_gel_id_is_ignored() {
    let model = tiny_model(tiny_config(Mechanism::Cross, 16, 2, 8), DType::F32);
    randomize(&model, 0.3, 14);
    let x = noise(1, 8, 7);
    let a = predict(&model, &x, &[599], &bundles(&model, &[(CAPTIONS[1], 0)]));
    let b = predict(&model, &x, &[599], &bundles(&model, &[(CAPTIONS[1], 2)]));
    assert_eq!(common::to_vec(&a), common::to_vec(&b));
}

#[test]
fn wrong_condition_width_is_a_shape_error() {
    let model = tiny_model(tiny_config(Mechanism::Cross, 16, 1, 8), DType::F32);
    let mut bs = bundles(&model, &[(CAPTIONS[0], 0)]);
    bs[0].c_obj = Tensor::zeros((3, 5), DType::F32, &Device::Cpu).unwrap();
    bs[0].null_embedding = Tensor::zeros((1, 5), DType::F32, &Device::Cpu).unwrap();
    bs[0].c_sen = None;
    let cond = CondBatch::from_bundles(&bs, &[10], &[false], 1000).unwrap();
    assert!(matches!(
        model.predict_noise(&noise(1, 8, 8), &[10], &cond),
        Err(touchgen_core::Error::Shape(_))
    ));
}
