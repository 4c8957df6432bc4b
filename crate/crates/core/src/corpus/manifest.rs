//! Sample manifests: `id,caption,image_path,label_a,label_b` CSV files.
//!
//! Image paths are stored relative to the directory holding the manifest.
//! Unlabeled rows leave both label columns empty.

use std::collections::HashSet;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, Terminator, WriterBuilder};

use crate::error::{Error, Result};
use crate::NUM_CLASSES;

pub const MANIFEST_HEADER: [&str; 5] = ["id", "caption", "image_path", "label_a", "label_b"];

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sample {
    pub id: String,
    pub caption: String,
    pub image_path: String,
    pub label_a: Option<u8>,
    pub label_b: Option<u8>,
}

impl Sample {
    pub fn is_labeled(&self) -> bool {
        self.label_a.is_some()
    }

    /// Checks that a label pair is coherent: both present or both absent,
    /// real images carry class 0, and generated ones carry a class in 1..=5.
    pub fn check_labels(
        label_a: Option<u8>,
        label_b: Option<u8>,
    ) -> std::result::Result<(), String> {
        match (label_a, label_b) {
            (None, None) => Ok(()),
            (Some(a), Some(b)) => {
                if a > 1 {
                    return Err(format!("label_a must be 0 or 1, got {a}"));
                }
                if b as usize >= NUM_CLASSES {
                    return Err(format!("label_b must be in 0..=5, got {b}"));
                }
                match (a, b) {
                    (0, 0) => Ok(()),
                    (0, _) => Err(format!(
                        "inconsistent labels: label_a=0 requires label_b=0, got {b}"
                    )),
                    (_, 0) => Err(
                        "inconsistent labels: label_a=1 requires label_b in 1..=5, got 0".into(),
                    ),
                    _ => Ok(()),
                }
            }
            _ => Err("label_a and label_b must both be present or both be empty".into()),
        }
    }
}

/// Parent directory of a manifest, against which its image paths resolve.
pub fn manifest_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn parse_label(field: &str, name: &str) -> std::result::Result<Option<u8>, String> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<u8>()
        .map(Some)
        .map_err(|_| format!("{name} is not a small non-negative integer: {field:?}"))
}

pub fn read_manifest(path: &Path) -> Result<Vec<Sample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = ReaderBuilder::new().has_headers(true).from_reader(file);
    let err = |line: u64, msg: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let headers = reader.headers()?.clone();
    if headers.iter().ne(MANIFEST_HEADER.iter().copied()) {
        return Err(err(
            1,
            format!(
                "expected header {:?}, found {:?}",
                MANIFEST_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }

    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let label_a = parse_label(&record[3], "label_a").map_err(|m| err(line, m))?;
        let label_b = parse_label(&record[4], "label_b").map_err(|m| err(line, m))?;
        Sample::check_labels(label_a, label_b).map_err(|m| err(line, m))?;
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(err(line, "empty id".into()));
        }
        if !seen.insert(id.clone()) {
            return Err(err(line, format!("duplicate id {id:?}")));
        }
        samples.push(Sample {
            id,
            caption: record[1].to_string(),
            image_path: record[2].to_string(),
            label_a,
            label_b,
        });
    }
    Ok(samples)
}

/// Serializes samples as manifest CSV bytes (LF line endings, RFC-4180 quoting).
pub fn manifest_bytes(samples: &[Sample]) -> Result<Vec<u8>> {
    let mut writer = WriterBuilder::new()
        .terminator(Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    writer.write_record(MANIFEST_HEADER)?;
    let label = |l: Option<u8>| l.map(|v| v.to_string()).unwrap_or_default();
    for s in samples {
        writer.write_record([
            s.id.as_str(),
            s.caption.as_str(),
            s.image_path.as_str(),
            &label(s.label_a),
            &label(s.label_b),
        ])?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::Data(format!("flushing manifest: {e}")))
}

pub fn write_manifest(samples: &[Sample], path: &Path) -> Result<()> {
    let mut ids = HashSet::new();
    for s in samples {
        Sample::check_labels(s.label_a, s.label_b)
            .map_err(|m| Error::Data(format!("sample {}: {m}", s.id)))?;
        if !ids.insert(s.id.as_str()) {
            return Err(Error::Data(format!("duplicate id {:?}", s.id)));
        }
    }
    let bytes = manifest_bytes(samples)?;
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}
