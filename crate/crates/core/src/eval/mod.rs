//! Metrics, experiment configuration, the training pipeline, evaluation and
//! ablations.

pub mod ablation;
pub mod config;
pub mod evaluate;
pub mod metrics;
pub mod pipeline;
pub mod probe;

pub use ablation::{default_grid, run_ablation, run_cell, write_ablation_csv, AblationRow, CellResult};
pub use config::{content_id, EvalConfig, ExperimentConfig, TrainConfig, OVERRIDE_KEYS};
pub use evaluate::{evaluate, generate_for, score, select_samples, write_report_csv, MetricReport, SampleMetrics};
pub use metrics::{gaussian_taps, mse, psnr, psnr_from_mse, ssim, PSNR_CAP};
pub use pipeline::{
    build_vocab, fit_cttp, fit_gel_probe, moving_average, prepare, train_diffusion, train_pipeline, write_loss_csv, LossRecord, PreparedData,
    TrainArtifacts, TrainOutcome,
};
pub use probe::{probe_features, GelProbe};
