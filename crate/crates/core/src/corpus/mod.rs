//! Corpus synthesis, manifests, tokenization and image preprocessing.

pub mod image;
pub mod manifest;
pub mod synth;
pub mod vocab;

use std::path::Path;

pub use image::{load_image, preprocess_image, ImageTensor, DEFAULT_MEAN, DEFAULT_STD};
pub use manifest::{manifest_bytes, manifest_dir, read_manifest, write_manifest, Sample};
pub use synth::{synth_corpus, SynthConfig, IMAGE_DIR, MANIFEST_FILE};
pub use vocab::{build_vocab, tokenize, TokenSeq, Vocab, DEFAULT_MAX_VOCAB};

use crate::error::Result;

/// One model input: a tokenized caption and a normalized image.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub tokens: TokenSeq,
    pub image: ImageTensor,
}

/// Preprocessed samples, aligned index-for-index with their manifest rows.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Tokenizes captions and loads/normalizes images. Image paths resolve
/// against `base_dir`.
pub fn prepare(
    samples: Vec<Sample>,
    base_dir: &Path,
    vocab: &Vocab,
    seq_len: usize,
    image_size: usize,
) -> Result<Dataset> {
    let examples = samples
        .iter()
        .map(|s| {
            let raw = load_image(&base_dir.join(&s.image_path))?;
            Ok(Example {
                tokens: tokenize(&s.caption, vocab, seq_len),
                image: preprocess_image(&raw, image_size, DEFAULT_MEAN, DEFAULT_STD)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { samples, examples })
}

/// Reads a manifest and prepares it, resolving images next to the manifest.
pub fn load_dataset(
    manifest: &Path,
    vocab: &Vocab,
    seq_len: usize,
    image_size: usize,
) -> Result<Dataset> {
    let samples = read_manifest(manifest)?;
    prepare(samples, &manifest_dir(manifest), vocab, seq_len, image_size)
}
