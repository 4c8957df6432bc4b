#![allow(dead_code)]

use std::path::Path;

use mmdetect_core::corpus::{
    build_vocab, load_dataset, synth_corpus, Dataset, SynthConfig, Vocab, DEFAULT_MAX_VOCAB,
    MANIFEST_FILE,
};
use mmdetect_core::model::ModelConfig;

pub const TRAIN_SEED: u64 = 11;
pub const VAL_SEED: u64 = 12;

pub struct Corpus {
    pub train: Dataset,
    pub val: Dataset,
    pub vocab: Vocab,
    pub model: ModelConfig,
}

/// Writes a synthetic split under `dir/name` and returns its manifest path.
pub fn synth_split(dir: &Path, name: &str, n: usize, seed: u64) -> std::path::PathBuf {
    let cfg = SynthConfig {
        n_samples: n,
        seed,
        id_prefix: format!("{name}-"),
        ..SynthConfig::default()
    };
    let out = dir.join(name);
    synth_corpus(&cfg, &out).unwrap();
    out.join(MANIFEST_FILE)
}

/// Train/val corpora with a vocabulary built from the training split.
pub fn corpus(dir: &Path, n_train: usize, n_val: usize) -> Corpus {
    let train_manifest = synth_split(dir, "train", n_train, TRAIN_SEED);
    let val_manifest = synth_split(dir, "val", n_val, VAL_SEED);
    let samples = mmdetect_core::corpus::read_manifest(&train_manifest).unwrap();
    let vocab = build_vocab(&samples, DEFAULT_MAX_VOCAB).unwrap();
    let model = ModelConfig {
        vocab_size: vocab.len(),
        ..ModelConfig::default()
    };
    let train = load_dataset(&train_manifest, &vocab, model.seq_len, model.image_size).unwrap();
    let val = load_dataset(&val_manifest, &vocab, model.seq_len, model.image_size).unwrap();
    Corpus {
        train,
        val,
        vocab,
        model,
    }
}
