//! Pseudo-label augmentation: score an unlabeled pool, keep rows where both
//! heads are confident, split the kept rows 8:2, and append them to the
//! original training and validation manifests.

use std::collections::HashSet;
use std::fs::File;
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use csv::{ReaderBuilder, Terminator, WriterBuilder};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::fixed::format6;
use crate::model::{predict_with_confidence, Params};
use crate::NUM_CLASSES;

pub const DEFAULT_THRESHOLD: f64 = 0.8;
pub const PSEUDO_RECORDS_FILE: &str = "pseudo_records.csv";
pub const PSEUDO_REPORT_FILE: &str = "pseudo_report.json";
pub const TRAIN_EXTENDED_FILE: &str = "train_extended.csv";
pub const VAL_EXTENDED_FILE: &str = "val_extended.csv";
pub const AUGMENT_REPORT_FILE: &str = "augment_report.json";
/// Pseudo rows are renamed `pseudo-<id>` in extended manifests.
pub const PSEUDO_ID_PREFIX: &str = "pseudo-";

pub const PSEUDO_HEADER: [&str; 7] = [
    "id",
    "caption",
    "image_path",
    "pred_a",
    "conf_a",
    "pred_b",
    "conf_b",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoRecord {
    pub id: String,
    pub caption: String,
    pub image_path: String,
    pub pred_a: u8,
    pub conf_a: f64,
    pub pred_b: u8,
    pub conf_b: f64,
}

/// One record per row of `pool`, in order.
pub fn score_manifest(params: &Params, pool: &Dataset) -> Result<Vec<PseudoRecord>> {
    let preds = predict_with_confidence(params, pool)?;
    Ok(pool
        .samples
        .iter()
        .zip(preds)
        .map(|(s, p)| PseudoRecord {
            id: s.id.clone(),
            caption: s.caption.clone(),
            image_path: s.image_path.clone(),
            pred_a: p.pred_a,
            conf_a: p.conf_a,
            pred_b: p.pred_b,
            conf_b: p.conf_b,
        })
        .collect())
}

/// Keeps records whose confidences both strictly exceed `threshold`.
pub fn filter_high_confidence(
    records: &[PseudoRecord],
    threshold: f64,
) -> Result<Vec<PseudoRecord>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!(
            "confidence threshold must lie in (0, 1), got {threshold}"
        )));
    }
    Ok(records
        .iter()
        .filter(|r| r.conf_a > threshold && r.conf_b > threshold)
        .cloned()
        .collect())
}

/// Seeded shuffle, then the first ⌊n/5⌋ records go to validation and the
/// rest to training. Returns `(train, val)`.
pub fn split_pseudo(records: &[PseudoRecord], seed: u64) -> (Vec<PseudoRecord>, Vec<PseudoRecord>) {
    let mut shuffled = records.to_vec();
    shuffled.shuffle(&mut Xoshiro256PlusPlus::seed_from_u64(seed));
    let n_val = records.len() / 5;
    let train = shuffled.split_off(n_val);
    (train, shuffled)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Pseudo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSplits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub train_provenance: Vec<Provenance>,
    pub val_provenance: Vec<Provenance>,
    /// Pseudo rows whose predicted label pair had to be made consistent.
    pub label_repairs: usize,
    /// Pseudo rows whose image path also appears among the original rows.
    pub duplicate_paths: usize,
}

/// Turns a pseudo record into a training sample. Returns whether the label
/// pair needed repair: a "real" Task-A call forces class 0, and a
/// generated call paired with class 0 is demoted to real.
pub fn to_sample(r: &PseudoRecord) -> (Sample, bool) {
    let (label_a, label_b, repaired) = match (r.pred_a, r.pred_b) {
        (0, 0) => (0, 0, false),
        (0, _) => (0, 0, true),
        (_, 0) => (0, 0, true),
        (_, b) => (1, b, false),
    };
    let sample = Sample {
        id: format!("{PSEUDO_ID_PREFIX}{}", r.id),
        caption: r.caption.clone(),
        image_path: r.image_path.clone(),
        label_a: Some(label_a),
        label_b: Some(label_b),
    };
    (sample, repaired)
}

/// Lexical normalization so `a/./b` and `a/c/../b` compare equal.
fn normalize(path: &str) -> PathBuf {
    let mut out = PathBuf::new();
    for c in Path::new(path).components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir
                if matches!(out.components().next_back(), Some(Component::Normal(_))) =>
            {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}

/// Appends pseudo rows after the original rows of each split. All image
/// paths must be relative to the same directory.
pub fn merge_manifests(
    original_train: &[Sample],
    original_val: &[Sample],
    pseudo_train: &[PseudoRecord],
    pseudo_val: &[PseudoRecord],
) -> Result<AugmentedSplits> {
    let original_paths: HashSet<PathBuf> = original_train
        .iter()
        .chain(original_val)
        .map(|s| normalize(&s.image_path))
        .collect();
    let mut label_repairs = 0;
    let mut duplicate_paths = 0;

    let mut extend =
        |original: &[Sample], pseudo: &[PseudoRecord]| -> Result<(Vec<Sample>, Vec<Provenance>)> {
            let mut rows = original.to_vec();
            let mut provenance = vec![Provenance::Original; original.len()];
            let mut ids: HashSet<String> = original.iter().map(|s| s.id.clone()).collect();
            for r in pseudo {
                let (sample, repaired) = to_sample(r);
                label_repairs += repaired as usize;
                duplicate_paths += original_paths.contains(&normalize(&sample.image_path)) as usize;
                if !ids.insert(sample.id.clone()) {
                    return Err(Error::Data(format!(
                        "pseudo row id {:?} collides with an existing id",
                        sample.id
                    )));
                }
                rows.push(sample);
                provenance.push(Provenance::Pseudo);
            }
            Ok((rows, provenance))
        };
    let (train, train_provenance) = extend(original_train, pseudo_train)?;
    let (val, val_provenance) = extend(original_val, pseudo_val)?;
    Ok(AugmentedSplits {
        train,
        val,
        train_provenance,
        val_provenance,
        label_repairs,
        duplicate_paths,
    })
}

/// Summary written next to `pseudo_records.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoReport {
    pub threshold: f64,
    pub scored: usize,
    pub kept: usize,
    pub dropped: usize,
    /// Kept rows by predicted Task-A class.
    pub kept_per_class_a: [usize; 2],
    /// Kept rows by predicted Task-B class.
    pub kept_per_class_b: [usize; NUM_CLASSES],
    /// Kept rows whose image also appears in the reference manifests, when given.
    pub duplicate_paths: Option<usize>,
}

impl PseudoReport {
    pub fn new(threshold: f64, scored: usize, kept: &[PseudoRecord]) -> Self {
        let mut kept_per_class_a = [0; 2];
        let mut kept_per_class_b = [0; NUM_CLASSES];
        for r in kept {
            kept_per_class_a[r.pred_a as usize] += 1;
            kept_per_class_b[r.pred_b as usize] += 1;
        }
        PseudoReport {
            threshold,
            scored,
            kept: kept.len(),
            dropped: scored - kept.len(),
            kept_per_class_a,
            kept_per_class_b,
            duplicate_paths: None,
        }
    }
}

/// Summary of one augmentation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentReport {
    pub seed: u64,
    pub original_train: usize,
    pub original_val: usize,
    pub pseudo_train: usize,
    pub pseudo_val: usize,
    pub train_total: usize,
    pub val_total: usize,
    pub label_repairs: usize,
    pub duplicate_paths: usize,
}

impl AugmentReport {
    pub fn new(seed: u64, splits: &AugmentedSplits) -> Self {
        let count = |p: &[Provenance], which| p.iter().filter(|&&x| x == which).count();
        AugmentReport {
            seed,
            original_train: count(&splits.train_provenance, Provenance::Original),
            original_val: count(&splits.val_provenance, Provenance::Original),
            pseudo_train: count(&splits.train_provenance, Provenance::Pseudo),
            pseudo_val: count(&splits.val_provenance, Provenance::Pseudo),
            train_total: splits.train.len(),
            val_total: splits.val.len(),
            label_repairs: splits.label_repairs,
            duplicate_paths: splits.duplicate_paths,
        }
    }
}

/// Counts records whose normalized image path appears in `reference`.
pub fn count_duplicate_paths(records: &[PseudoRecord], reference: &[Sample]) -> usize {
    let paths: HashSet<PathBuf> = reference.iter().map(|s| normalize(&s.image_path)).collect();
    records
        .iter()
        .filter(|r| paths.contains(&normalize(&r.image_path)))
        .count()
}

/// Expresses `path` (relative to `from_dir`) relative to `to_dir`, falling
/// back to an absolute path when no relative form exists.
pub fn rebase_path(path: &str, from_dir: &Path, to_dir: &Path) -> Result<String> {
    let resolve = |p: &Path| -> Result<PathBuf> {
        p.canonicalize()
            .or_else(|_| std::path::absolute(p))
            .map_err(|e| Error::io(p, e))
    };
    if resolve(from_dir)? == resolve(to_dir)? {
        return Ok(path.to_string());
    }
    let target = resolve(&from_dir.join(path))?;
    let base = resolve(to_dir)?;
    let rel = pathdiff::diff_paths(&target, &base).unwrap_or(target);
    rel.to_str()
        .map(str::to_string)
        .ok_or_else(|| Error::Data(format!("image path {} is not UTF-8", rel.display())))
}

pub fn write_pseudo_records(records: &[PseudoRecord], path: &Path) -> Result<()> {
    let mut writer = WriterBuilder::new()
        .terminator(Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    writer.write_record(PSEUDO_HEADER)?;
    for r in records {
        writer.write_record([
            r.id.as_str(),
            r.caption.as_str(),
            r.image_path.as_str(),
            &r.pred_a.to_string(),
            &format6(r.conf_a),
            &r.pred_b.to_string(),
            &format6(r.conf_b),
        ])?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Data(format!("flushing pseudo records: {e}")))?;
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_pseudo_records(path: &Path) -> Result<Vec<PseudoRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = ReaderBuilder::new().has_headers(true).from_reader(file);
    let err = |line: u64, msg: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        msg,
    };
    if reader.headers()?.iter().ne(PSEUDO_HEADER.iter().copied()) {
        return Err(err(
            1,
            format!("expected header {:?}", PSEUDO_HEADER.join(",")),
        ));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let int = |i: usize, max: u8| {
            record[i]
                .parse::<u8>()
                .ok()
                .filter(|&v| v <= max)
                .ok_or_else(|| {
                    err(
                        line,
                        format!("{} out of range: {:?}", PSEUDO_HEADER[i], &record[i]),
                    )
                })
        };
        let conf = |i: usize| {
            record[i]
                .parse::<f64>()
                .ok()
                .filter(|v| *v > 0.0 && *v <= 1.0)
                .ok_or_else(|| {
                    err(
                        line,
                        format!("{} must lie in (0, 1]: {:?}", PSEUDO_HEADER[i], &record[i]),
                    )
                })
        };
        out.push(PseudoRecord {
            id: record[0].to_string(),
            caption: record[1].to_string(),
            image_path: record[2].to_string(),
            pred_a: int(3, 1)?,
            conf_a: conf(4)?,
            pred_b: int(5, (NUM_CLASSES - 1) as u8)?,
            conf_b: conf(6)?,
        });
    }
    Ok(out)
}
