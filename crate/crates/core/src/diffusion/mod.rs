//! Noise schedule, forward process, ε-loss, guidance and samplers.

use candle_core::{DType, Tensor};

use crate::error::Result;
use crate::text::CondBatch;

pub mod codec;
pub mod guidance;
pub mod loss;
pub mod sampler;
pub mod schedule;

pub use codec::{check_codec, codec_by_name, ensure_codec_matches, head_channels, Codec, IdentityCodec, PixelCodec};
pub use guidance::{cfg_combine, cfg_noise, GuidanceConfig, DEFAULT_CFG_SCALE};
pub use loss::{training_loss, training_loss_bundles};
pub use sampler::{ddim_timesteps, initial_noise, sample, SamplerConfig, SamplerKind, StepObserver};
pub use schedule::{make_schedule, q_sample, NoiseSchedule, ScheduleKind};

/// Anything that predicts the added noise from `(x_t, t, condition)`.
pub trait NoisePredictor {
    /// `(B, H, W, C)` ε-prediction for a `(B, H, W, C)` input.
    fn predict_noise(&self, x_t: &Tensor, t: &[usize], cond: &CondBatch) -> Result<Tensor>;

    fn dtype(&self) -> DType;
}
