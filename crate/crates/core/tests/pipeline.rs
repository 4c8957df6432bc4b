mod common;

use std::fs;

use mmdetect_core::corpus::{
    load_dataset, read_manifest, write_manifest, IMAGE_DIR, MANIFEST_FILE,
};
use mmdetect_core::model::{predict_with_confidence, predictions_csv};
use mmdetect_core::objective::{
    train, TrainConfig, BEST_CHECKPOINT, HISTORY_FILE, LAST_CHECKPOINT,
};
use mmdetect_core::persist::load_checkpoint;
use mmdetect_core::pseudo::{merge_manifests, rebase_path};

#[test]
fn synthetic_corpus_is_reproducible_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let a = common::synth_split(dir.path(), "a", 36, 5);
    let b = common::synth_split(&dir.path().join("again"), "a", 36, 5);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    for s in read_manifest(&a).unwrap() {
        let name = format!("{}.ppm", s.id);
        let x = fs::read(a.parent().unwrap().join(IMAGE_DIR).join(&name)).unwrap();
        let y = fs::read(b.parent().unwrap().join(IMAGE_DIR).join(&name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
}

#[test]
fn manifests_resolve_images_relative_to_their_directory() {
    let dir = tempfile::tempdir().unwrap();
    let c = common::corpus(dir.path(), 36, 12);
    let original = dir.path().join("train").join(MANIFEST_FILE);
    let moved_dir = dir.path().join("elsewhere/deeper");
    fs::create_dir_all(&moved_dir).unwrap();
    let from = original.parent().unwrap();
    let rebased: Vec<_> = read_manifest(&original)
        .unwrap()
        .into_iter()
        .map(|mut s| {
            s.image_path = rebase_path(&s.image_path, from, &moved_dir).unwrap();
            s
        })
        .collect();
    let moved = moved_dir.join(MANIFEST_FILE);
    write_manifest(&rebased, &moved).unwrap();
    let reloaded = load_dataset(&moved, &c.vocab, c.model.seq_len, c.model.image_size).unwrap();
    assert_eq!(reloaded.examples, c.train.examples);
}

#[test]
fn training_artifacts_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let c = common::corpus(dir.path(), 120, 30);
    let out = dir.path().join("run");
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::desk_scale()
    };
    let outcome = train(&c.train, &c.val, &c.vocab, &c.model, &cfg, Some(&out)).unwrap();
    for f in [LAST_CHECKPOINT, BEST_CHECKPOINT, HISTORY_FILE] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let (last, meta) = load_checkpoint(&out.join(LAST_CHECKPOINT)).unwrap();
    assert_eq!(meta.epoch, 2);
    assert_eq!(meta.vocab, c.vocab);
    assert_eq!(last, outcome.last);
    let csv = predictions_csv(&predict_with_confidence(&last, &c.val).unwrap()).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 31);
}

#[test]
fn merging_nothing_reproduces_the_original_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let train = common::synth_split(dir.path(), "t", 24, 1);
    let val = common::synth_split(dir.path(), "v", 12, 2);
    let (t, v) = (read_manifest(&train).unwrap(), read_manifest(&val).unwrap());
    let merged = merge_manifests(&t, &v, &[], &[]).unwrap();
    let out = dir.path().join("t").join("extended.csv");
    write_manifest(&merged.train, &out).unwrap();
    assert_eq!(fs::read(out).unwrap(), fs::read(train).unwrap());
}
