use touchgen_core::data::{generate_dataset, write_dataset, DataConfig};
use touchgen_core::eval::{
    default_grid, evaluate, moving_average, run_ablation, train_diffusion, train_pipeline, write_report_csv,
};
use touchgen_core::{Dataset, Error, ExperimentConfig, TouchModel};

fn small_dataset() -> Dataset {
    generate_dataset(&DataConfig {
        seeds_per_combo: 4,
        no_contact_per_gel: 2,
        ..DataConfig::default()
    })
    .unwrap()
}

fn small_config(steps: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::compact();
    for (k, v) in [("width", "32"), ("depth", "1"), ("patch_size", "8"), ("batch_size", "8")] {
        c.apply_override(k, v).unwrap();
    }
    c.model.dit.heads = 2;
    c.model.dit.modulation_hidden = 32;
    c.optim.warmup_steps = 10;
    c.train.steps = steps;
    c.train.log_every = 0;
    c.sampler.steps = 5;
    c.eval.max_samples = Some(6);
    c
}

#[test]
fn training_reduces_the_loss() {
    let ds = small_dataset();
    let out = train_diffusion(&small_config(300), &ds).unwrap();
    let losses: Vec<f64> = out.losses.iter().map(|l| l.loss).collect();
    assert_eq!(losses.len(), 300);
    let ma = moving_average(&losses, 50);
    assert!(ma.last().unwrap() < &(ma[0] * 0.92), "{} -> {}", ma[0], ma.last().unwrap());
    assert!(out.losses.iter().all(|l| l.grad_norm.is_finite() && l.lr > 0.0));
}

#[test]
fn training_and_evaluation_are_bit_reproducible() {
    let ds = small_dataset();
    let cfg = small_config(20);
    let a = train_diffusion(&cfg, &ds).unwrap();
    let b = train_diffusion(&cfg, &ds).unwrap();
    let la: Vec<f64> = a.losses.iter().map(|l| l.loss).collect();
    let lb: Vec<f64> = b.losses.iter().map(|l| l.loss).collect();
    assert_eq!(la, lb);
    let (ra, ga, _) = evaluate(&a.model, &ds, &cfg, None).unwrap();
    let (rb, gb, _) = evaluate(&b.model, &ds, &cfg, None).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(ga, gb);
    assert_eq!(ra.rows.len(), 6);
    assert!(ra.mean_cttp.is_none());

    let mut other = cfg.clone();
    other.seed = 44;
    let c = train_diffusion(&other, &ds).unwrap();
    assert_ne!(la, c.losses.iter().map(|l| l.loss).collect::<Vec<_>>());
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let ds = small_dataset();
    let cfg = small_config(10);
    let out = train_diffusion(&cfg, &ds).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    out.model.save(&path).unwrap();
    let back = TouchModel::load(&path).unwrap();
    assert_eq!(back.config, out.model.config);
    let (ra, _, _) = evaluate(&out.model, &ds, &cfg, None).unwrap();
    let (rb, _, _) = evaluate(&back, &ds, &cfg, None).unwrap();
    assert_eq!(ra, rb);

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(TouchModel::load(&path), Err(Error::Integrity(_))));
}

#[test]
fn pipeline_writes_its_artifacts() {
    let ds = small_dataset();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_dataset(&data, &ds.manifest, &ds.samples).unwrap();
    let mut cfg = small_config(5);
    cfg.data_root = data;
    cfg.output_dir = dir.path().join("run");
    let art = train_pipeline(&cfg).unwrap();
    assert!(art.checkpoint.exists() && art.loss_csv.exists() && art.config_echo.exists());
    let echoed = ExperimentConfig::load(&art.config_echo).unwrap();
    assert_eq!(echoed.hash().unwrap(), cfg.hash().unwrap());
    let csv = std::fs::read_to_string(&art.loss_csv).unwrap();
    assert_eq!(csv.lines().count(), 6);

    let model = TouchModel::load(&art.checkpoint).unwrap();
    let (report, _, _) = evaluate(&model, &ds, &cfg, None).unwrap();
    let out = dir.path().join("report.csv");
    write_report_csv(&out, &report).unwrap();
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.lines().last().unwrap().starts_with("mean,"));
    assert!(text.contains("n/a"));
}

#[test]
fn ablation_keeps_failed_cells_as_rows() {
    let ds = small_dataset();
    let cfg = small_config(3);
    let grid = vec![
        ("n_gs".to_string(), vec!["2".to_string(), "zero".to_string()]),
        ("layers".to_string(), vec!["1".to_string()]),
    ];
    let rows = run_ablation(&cfg, &grid, &ds, None, None).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].status, "ok");
    assert_eq!(rows[1].status, "error");
    assert!(!rows[1].error.is_empty());
    assert_eq!(rows[2].status, "ok");
    assert_eq!(rows[0].lpips, "n/a");

    let bad = vec![("learning".to_string(), vec!["1".to_string()])];
    assert!(matches!(run_ablation(&cfg, &bad, &ds, None, None), Err(Error::Config(_))));
    assert_eq!(default_grid("mechanism", 4).unwrap().len(), 3);
}
