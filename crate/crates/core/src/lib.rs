//! Text-conditioned tactile image generation with dual-grain conditioning:
//! object-level captions plus learnable gel-status prompts, fused by timestep
//! and consumed by a diffusion transformer.

pub mod checkpoint;
pub mod cttp;
pub mod data;
pub mod diffusion;
pub mod dit;
pub mod error;
pub mod eval;
pub mod image;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod text;
pub mod touch;

pub use checkpoint::Checkpoint;
pub use cttp::{train_cttp, CttpConfig, CttpModel, TexturePrediction};
pub use data::{DataConfig, Dataset, Split, TactileSample};
pub use diffusion::{NoisePredictor, NoiseSchedule, SamplerConfig, SamplerKind};
pub use dit::{DitConfig, DitModel, Mechanism};
pub use error::{Error, Result};
pub use eval::{ExperimentConfig, GelProbe, MetricReport};
pub use image::Image;
pub use optim::{OptimConfig, Optimizer};
pub use text::{CondBatch, ConditionBundle, ConditionToggles, ThetaGate, Vocab};
pub use touch::{ModelConfig, TouchModel};
