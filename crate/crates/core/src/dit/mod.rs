//! Diffusion transformer with three ways of consuming the condition rows.

pub mod block;
pub mod config;
pub mod embed;
pub mod model;

pub use config::{format_layers, parse_layers, DitConfig, Mechanism};
pub use embed::{patchify, sincos_2d, timestep_frequencies, unpatchify, TimestepEmbedder};
pub use model::{BlockTrace, DitModel, DitOutput, ForwardTrace};
