use candle_core::{DType, Device, Tensor};
use rand::Rng as _;
use touchgen_core::cttp::{info_nce_loss, train_cttp, CttpConfig, CttpModel};
use touchgen_core::data::{generate_dataset, DataConfig};
use touchgen_core::text::build_caption;
use touchgen_core::{rng, Image, Split};

/// Double-loop symmetric cross-entropy over cosine similarities.
fn brute_force(a: &[Vec<f64>], b: &[Vec<f64>], tau: f64) -> f64 {
    let norm = |v: &Vec<f64>| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let n = a.len();
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = a[i].iter().zip(&b[j]).map(|(x, y)| x * y).sum();
            s[i][j] = dot / (norm(&a[i]) * norm(&b[j])) / tau;
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        let row: f64 = (0..n).map(|j| s[i][j].exp()).sum();
        let col: f64 = (0..n).map(|j| s[j][i].exp()).sum();
        total -= s[i][i] - row.ln();
        total -= s[i][i] - col.ln();
    }
    total / n as f64
}

#[test]
fn info_nce_matches_brute_force() {
    let mut r = rng::stream(43, 40);
    for batch in 0..100 {
        for b in 1..=8 {
            let d = 5;
            let tau = 0.05 + r.random::<f64>();
            let a: Vec<Vec<f64>> = (0..b).map(|_| rng::normal_vec_f64(&mut r, d)).collect();
            let c: Vec<Vec<f64>> = (0..b).map(|_| rng::normal_vec_f64(&mut r, d)).collect();
            let ta = Tensor::from_vec(a.concat(), (b, d), &Device::Cpu).unwrap();
            let tc = Tensor::from_vec(c.concat(), (b, d), &Device::Cpu).unwrap();
            let got = info_nce_loss(&ta, &tc, tau).unwrap().to_scalar::<f64>().unwrap();
            if b == 1 {
                assert_eq!(got, 0.0);
            }
            let want = brute_force(&a, &c, tau);
            assert!((got - want).abs() < 1e-6 * want.abs().max(1.0), "batch {batch} B={b}: {got} vs {want}");
        }
    }
}

#[test]
fn loss_is_symmetric_in_its_arguments() {
    let mut r = rng::stream(43, 41);
    let a = Tensor::from_vec(rng::normal_vec_f64(&mut r, 24), (4, 6), &Device::Cpu).unwrap();
    let b = Tensor::from_vec(rng::normal_vec_f64(&mut r, 24), (4, 6), &Device::Cpu).unwrap();
    let x = info_nce_loss(&a, &b, 0.1).unwrap().to_scalar::<f64>().unwrap();
    let y = info_nce_loss(&b, &a, 0.1).unwrap().to_scalar::<f64>().unwrap();
    assert!((x - y).abs() < 1e-12);
}

fn small_dataset() -> touchgen_core::Dataset {
    let cfg = DataConfig {
        seeds_per_combo: 8,
        no_contact_per_gel: 2,
        ..DataConfig::default()
    };
    generate_dataset(&cfg).unwrap()
}

#[test]
fn trained_alignment_model_separates_textures() {
    let ds = small_dataset();
    let train = ds.contact_split(Split::Train);
    let imgs: Vec<&Image> = train.iter().map(|s| &s.image).collect();
    let caps: Vec<String> = train.iter().map(|s| build_caption(&s.shape_caption, &s.texture_caption).unwrap()).collect();
    let cfg = CttpConfig {
        epochs: 12,
        ..CttpConfig::default()
    };
    let (model, losses) = train_cttp(&imgs, &caps, &cfg).unwrap();
    assert!(losses.last().unwrap() < &(losses[0] * 0.8), "{losses:?}");

    let test = ds.contact_split(Split::Test);
    let textures = ds.manifest.textures.clone();
    let mut hits = 0;
    for s in &test {
        let p = model.predict_texture(&s.image, &textures, &s.shape_caption, 1).unwrap();
        hits += usize::from(p.top[0].0 == s.texture_caption);
    }
    let acc = hits as f64 / test.len() as f64;
    assert!(acc > 1.5 / textures.len() as f64, "top-1 texture accuracy {acc}");

    let s = &test[0];
    let own = build_caption(&s.shape_caption, &s.texture_caption).unwrap();
    let v = model.score(&s.image, &own).unwrap();
    assert!((-1.0..=1.0).contains(&v));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cttp.ckpt");
    model.save(&path).unwrap();
    let back = CttpModel::load(&path).unwrap();
    assert_eq!(back.score(&s.image, &own).unwrap(), v);
}

#[test]
fn mismatched_inputs_are_rejected() {
    let img = Image::filled(32, 32, &[0.5, 0.5, 0.5]);
    assert!(train_cttp(&[&img], &[], &CttpConfig::default()).is_err());
    let e = Tensor::zeros((2, 3), DType::F64, &Device::Cpu).unwrap();
    let f = Tensor::zeros((3, 3), DType::F64, &Device::Cpu).unwrap();
    assert!(info_nce_loss(&e, &f, 0.07).is_err());
}
