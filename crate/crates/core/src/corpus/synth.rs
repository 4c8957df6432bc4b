//! Deterministic synthetic corpus with planted generator fingerprints.
//!
//! Each sample gets a caption from a small template grammar and an image made
//! of a caption-seeded smooth texture plus Gaussian pixel noise. Generated
//! classes (1..=5) additionally carry a cosine grating in the blue channel
//! whose 2-D frequency identifies the generator. Captions are drawn
//! independently of the class, so only the image carries the label signal.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::image::encode_ppm;
use super::manifest::{manifest_bytes, Sample};
use crate::error::{Error, Result};
use crate::NUM_CLASSES;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const IMAGE_DIR: &str = "images";

/// Period of every fingerprint grating, in pixels.
pub const FINGERPRINT_PERIOD: usize = 4;

/// Grating frequency (cycles per period along x, along y) for each class.
/// Class 0 (real) has no fingerprint.
pub const FINGERPRINT_FREQS: [(usize, usize); NUM_CLASSES] =
    [(0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (0, 2)];

const TEXTURE_AMPLITUDE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub classes: usize,
    /// Images are `image_size`×`image_size`.
    pub image_size: usize,
    /// Fingerprint amplitude as a fraction of full pixel range.
    pub amplitude: f64,
    /// Std of per-pixel Gaussian noise, same unit as `amplitude`.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Round-robin classes with equal counts; otherwise classes are drawn uniformly.
    pub balanced: bool,
    /// Write labels into the manifest; `false` leaves both label columns empty.
    pub labeled: bool,
    pub id_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_samples: 600,
            classes: NUM_CLASSES,
            image_size: 32,
            amplitude: 0.25,
            noise_sigma: 0.05,
            seed: 0,
            balanced: true,
            labeled: true,
            id_prefix: "s".into(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.classes != NUM_CLASSES {
            return bad(format!(
                "classes must be {NUM_CLASSES}, got {}",
                self.classes
            ));
        }
        if self.n_samples == 0 {
            return bad("n_samples must be positive".into());
        }
        if self.balanced && !self.n_samples.is_multiple_of(NUM_CLASSES) {
            return bad(format!(
                "balanced corpus needs n_samples divisible by {NUM_CLASSES}, got {}",
                self.n_samples
            ));
        }
        if !(0.0..=1.0).contains(&self.amplitude) {
            return bad(format!(
                "amplitude must lie in [0, 1], got {}",
                self.amplitude
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            ));
        }
        if self.image_size == 0 {
            return bad("image_size must be positive".into());
        }
        Ok(())
    }
}

const DETERMINERS: [&str; 4] = ["a", "the", "one", "this"];
const ADJECTIVES: [&str; 10] = [
    "red", "small", "old", "bright", "wooden", "quiet", "busy", "green", "large", "white",
];
const NOUNS: [&str; 12] = [
    "dog", "cat", "bicycle", "train", "kitchen", "street", "boat", "clock", "horse", "table",
    "bus", "pizza",
];
const RELATIONS: [&str; 6] = [
    "sitting on",
    "next to",
    "near",
    "in front of",
    "behind",
    "under",
];
const PLACES: [&str; 8] = [
    "the beach",
    "a park",
    "the road",
    "a window",
    "the river",
    "a field",
    "the market",
    "a bench",
];

fn pick<'a, R: Rng>(rng: &mut R, words: &[&'a str]) -> &'a str {
    words[rng.random_range(0..words.len())]
}

fn caption<R: Rng>(rng: &mut R) -> String {
    format!(
        "{} {} {} {} {}",
        pick(rng, &DETERMINERS),
        pick(rng, &ADJECTIVES),
        pick(rng, &NOUNS),
        pick(rng, &RELATIONS),
        pick(rng, &PLACES)
    )
}

fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Pixel intensities in [0, 1], channel-major, before fingerprint and noise.
fn texture(caption: &str, size: usize) -> Vec<f64> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(fnv1a(caption));
    let mut out = Vec::with_capacity(3 * size * size);
    for _ in 0..3 {
        let base = rng.random_range(0.35..0.65);
        let fx = rng.random_range(1..=2) as f64;
        let fy = rng.random_range(1..=2) as f64;
        let phase = rng.random_range(0.0..TAU);
        for y in 0..size {
            for x in 0..size {
                let arg = TAU * (fx * x as f64 + fy * y as f64) / size as f64 + phase;
                out.push(base + TEXTURE_AMPLITUDE * arg.sin());
            }
        }
    }
    out
}

/// The blue-channel grating for `class` at pixel (`x`, `y`), unit amplitude.
pub fn fingerprint(class: usize, x: usize, y: usize) -> f64 {
    if class == 0 {
        return 0.0;
    }
    let (u, v) = FINGERPRINT_FREQS[class];
    let phase = (u * x + v * y) % FINGERPRINT_PERIOD;
    (TAU * phase as f64 / FINGERPRINT_PERIOD as f64).cos()
}

/// Renders one image as interleaved RGB bytes.
fn render<R: Rng>(
    cfg: &SynthConfig,
    class: usize,
    caption: &str,
    rng: &mut R,
    noise: &Normal<f64>,
) -> Vec<u8> {
    let n = cfg.image_size;
    let mut planes = texture(caption, n);
    for y in 0..n {
        for x in 0..n {
            planes[(2 * n + y) * n + x] += cfg.amplitude * fingerprint(class, x, y);
        }
    }
    for v in planes.iter_mut() {
        *v += noise.sample(rng);
    }
    let mut rgb = Vec::with_capacity(planes.len());
    for y in 0..n {
        for x in 0..n {
            for c in 0..3 {
                rgb.push((planes[(c * n + y) * n + x].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    rgb
}

/// Writes `images/<id>.ppm` files and `manifest.csv` under `out_dir` and
/// returns the manifest rows. Output is a pure function of `cfg`.
pub fn synth_corpus(cfg: &SynthConfig, out_dir: &Path) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let image_dir = out_dir.join(IMAGE_DIR);
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;

    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let width = (cfg.n_samples - 1).to_string().len().max(5);

    let mut samples = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples {
        let class = if cfg.balanced {
            i % NUM_CLASSES
        } else {
            rng.random_range(0..NUM_CLASSES)
        };
        let caption = caption(&mut rng);
        let rgb = render(cfg, class, &caption, &mut rng, &noise);
        let id = format!("{}{i:0width$}", cfg.id_prefix);
        let rel = format!("{IMAGE_DIR}/{id}.ppm");
        let path = out_dir.join(&rel);
        fs::write(&path, encode_ppm(cfg.image_size, cfg.image_size, &rgb))
            .map_err(|e| Error::io(&path, e))?;
        let (label_a, label_b) = if cfg.labeled {
            (Some((class > 0) as u8), Some(class as u8))
        } else {
            (None, None)
        };
        samples.push(Sample {
            id,
            caption,
            image_path: rel,
            label_a,
            label_b,
        });
    }

    let manifest = out_dir.join(MANIFEST_FILE);
    fs::write(&manifest, manifest_bytes(&samples)?).map_err(|e| Error::io(&manifest, e))?;
    Ok(samples)
}
