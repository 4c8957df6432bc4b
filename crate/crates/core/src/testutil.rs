//! Fixtures shared by unit tests.

use rand::Rng;

use crate::corpus::{Example, ImageTensor, TokenSeq};
use crate::model::ModelConfig;

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 20,
        seq_len: 6,
        image_size: 8,
        patch_size: 4,
        text_dim: 5,
        image_dim: 4,
        shared_dim: 7,
        num_classes: 6,
    }
}

pub fn random_example(cfg: &ModelConfig, rng: &mut impl Rng) -> Example {
    let real = rng.random_range(1..=cfg.seq_len);
    let mut ids: Vec<u32> = (0..cfg.seq_len)
        .map(|_| rng.random_range(1..cfg.vocab_size as u32))
        .collect();
    ids[0] = 2;
    ids[real..].fill(0);
    let mask = (0..cfg.seq_len).map(|i| (i < real) as u8).collect();
    let mut image = ImageTensor::zeros(cfg.image_size, cfg.image_size);
    image
        .data
        .iter_mut()
        .for_each(|v| *v = rng.random_range(-1.0..1.0));
    Example {
        tokens: TokenSeq { ids, mask },
        image,
    }
}
