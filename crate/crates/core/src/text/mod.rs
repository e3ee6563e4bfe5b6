//! Captions, tokenization, object-level encoding, gel prompts and fusion.

pub mod caption;
pub mod encoder;
pub mod fusion;
pub mod prompts;
pub mod tokenizer;

pub use caption::{build_caption, parse_caption, ConditionToggles};
pub use encoder::ObjectEncoder;
pub use fusion::{fuse_conditions, fuse_null, CondBatch, ConditionBundle, Phase, ThetaGate};
pub use prompts::GelPromptBank;
pub use tokenizer::{TokenSequence, Vocab, DEFAULT_MAX_TOKENS, PAD_ID, UNK_ID};
