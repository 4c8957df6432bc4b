//! Multimodal multi-task classifier for AI-generated image detection.
//!
//! A caption and an image go through two small encoders. Their features are
//! concatenated and projected into a shared space, which feeds two heads:
//! a binary "is this AI-generated" logit (Task A) and a six-way generator
//! attribution (Task B, class 0 = real). Around the network sit a synthetic
//! corpus with planted generator fingerprints, a conditional multi-task loss,
//! an AdamW training loop with per-epoch model selection, evaluation metrics,
//! a pseudo-label augmentation pipeline, and a bit-exact checkpoint format.

pub mod corpus;
pub mod error;
mod fixed;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod persist;
pub mod pseudo;
pub mod tensor;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};

/// Number of Task-B classes: real plus five generators.
pub const NUM_CLASSES: usize = 6;

/// Display names for Task-B class indices.
pub const CLASS_NAMES: [&str; NUM_CLASSES] =
    ["real", "sd3", "sdxl", "sd2.1", "dalle3", "midjourney6"];
