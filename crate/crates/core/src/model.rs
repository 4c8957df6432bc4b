//! Dual-encoder fusion network with a binary head and a six-way head.
//!
//! Text path: masked mean of token embeddings, then affine + ReLU.
//! Image path: flatten non-overlapping P×P patches, affine projection,
//! mean over patches, then affine + ReLU. Both features are concatenated,
//! projected with affine + ReLU into the shared space, and read out by
//! the Task-A logit and the Task-B logits.

use std::borrow::Borrow;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{DEFAULT_MAX_VOCAB, PAD};
use crate::corpus::{Dataset, Example, ImageTensor};
use crate::error::{Error, Result};
use crate::tensor::{affine, Tensor};
use crate::NUM_CLASSES;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub seq_len: usize,
    /// Square input side in pixels.
    pub image_size: usize,
    pub patch_size: usize,
    pub text_dim: usize,
    pub image_dim: usize,
    pub shared_dim: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: DEFAULT_MAX_VOCAB,
            seq_len: 16,
            image_size: 32,
            patch_size: 4,
            text_dim: 32,
            image_dim: 32,
            shared_dim: 64,
            num_classes: NUM_CLASSES,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_classes != NUM_CLASSES {
            return bad(format!(
                "num_classes must be {NUM_CLASSES}, got {}",
                self.num_classes
            ));
        }
        if [
            self.text_dim,
            self.image_dim,
            self.shared_dim,
            self.patch_size,
            self.image_size,
        ]
        .contains(&0)
        {
            return bad("model dimensions must be positive".into());
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return bad(format!(
                "image size {} is not divisible by patch size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.seq_len < 2 {
            return bad(format!("seq_len must be at least 2, got {}", self.seq_len));
        }
        if self.vocab_size < 3 {
            return bad(format!(
                "vocab_size must be at least 3, got {}",
                self.vocab_size
            ));
        }
        Ok(())
    }

    pub fn patch_len(&self) -> usize {
        ImageTensor::CHANNELS * self.patch_size * self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        let side = self.image_size / self.patch_size;
        side * side
    }

    /// Expected shape of every parameter tensor, in canonical order.
    pub fn param_shapes(&self) -> [(&'static str, Vec<usize>); 13] {
        let (dt, dv, ds, k) = (
            self.text_dim,
            self.image_dim,
            self.shared_dim,
            self.num_classes,
        );
        [
            ("embedding", vec![self.vocab_size, dt]),
            ("text_w", vec![dt, dt]),
            ("text_b", vec![dt]),
            ("patch_w", vec![self.patch_len(), dv]),
            ("patch_b", vec![dv]),
            ("image_w", vec![dv, dv]),
            ("image_b", vec![dv]),
            ("fusion_w", vec![dt + dv, ds]),
            ("fusion_b", vec![ds]),
            ("head_a_w", vec![ds, 1]),
            ("head_a_b", vec![1]),
            ("head_b_w", vec![ds, k]),
            ("head_b_b", vec![k]),
        ]
    }
}

/// All trainable tensors. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub config: ModelConfig,
    pub embedding: Tensor,
    pub text_w: Tensor,
    pub text_b: Tensor,
    pub patch_w: Tensor,
    pub patch_b: Tensor,
    pub image_w: Tensor,
    pub image_b: Tensor,
    pub fusion_w: Tensor,
    pub fusion_b: Tensor,
    pub head_a_w: Tensor,
    pub head_a_b: Tensor,
    pub head_b_w: Tensor,
    pub head_b_b: Tensor,
}

pub const PARAM_NAMES: [&str; 13] = [
    "embedding",
    "text_w",
    "text_b",
    "patch_w",
    "patch_b",
    "image_w",
    "image_b",
    "fusion_w",
    "fusion_b",
    "head_a_w",
    "head_a_b",
    "head_b_w",
    "head_b_b",
];

impl Params {
    pub fn zeros(config: &ModelConfig) -> Self {
        let shapes = config.param_shapes();
        let mut tensors = shapes.iter().map(|(_, s)| Tensor::zeros(s));
        let mut next = || tensors.next().unwrap();
        Params {
            config: config.clone(),
            embedding: next(),
            text_w: next(),
            text_b: next(),
            patch_w: next(),
            patch_b: next(),
            image_w: next(),
            image_b: next(),
            fusion_w: next(),
            fusion_b: next(),
            head_a_w: next(),
            head_a_b: next(),
            head_b_w: next(),
            head_b_b: next(),
        }
    }

    /// Builds parameters from tensors in canonical order, checking shapes.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let mut params = Params::zeros(config);
        if tensors.len() != PARAM_NAMES.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, got {}",
                PARAM_NAMES.len(),
                tensors.len()
            )));
        }
        for ((name, slot), t) in PARAM_NAMES.iter().zip(params.tensors_mut()).zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "{name}: expected {:?}, got {:?}",
                    slot.shape(),
                    t.shape()
                )));
            }
            *slot = t;
        }
        Ok(params)
    }

    pub fn tensors(&self) -> [&Tensor; 13] {
        [
            &self.embedding,
            &self.text_w,
            &self.text_b,
            &self.patch_w,
            &self.patch_b,
            &self.image_w,
            &self.image_b,
            &self.fusion_w,
            &self.fusion_b,
            &self.head_a_w,
            &self.head_a_b,
            &self.head_b_w,
            &self.head_b_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 13] {
        [
            &mut self.embedding,
            &mut self.text_w,
            &mut self.text_b,
            &mut self.patch_w,
            &mut self.patch_b,
            &mut self.image_w,
            &mut self.image_b,
            &mut self.fusion_w,
            &mut self.fusion_b,
            &mut self.head_a_w,
            &mut self.head_a_b,
            &mut self.head_b_w,
            &mut self.head_b_b,
        ]
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, &Tensor)> {
        PARAM_NAMES.into_iter().zip(self.tensors())
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }
}

/// Xavier-uniform weights, zero biases, zero PAD embedding row.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<Params> {
    config.validate()?;
    let mut params = Params::zeros(config);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    for t in params.tensors_mut() {
        if let [fan_in, fan_out] = *t.shape() {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in t.data_mut() {
                *w = rng.random_range(-bound..=bound);
            }
        }
    }
    params.embedding.row_mut(PAD as usize).fill(0.0);
    Ok(params)
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

/// Intermediate values of one sample's forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub(crate) struct Activations {
    pub text_mean: Vec<f64>,
    pub text_real: usize,
    pub text_pre: Vec<f64>,
    pub patch_mean: Vec<f64>,
    pub patch_proj: Vec<f64>,
    pub image_pre: Vec<f64>,
    pub fusion_in: Vec<f64>,
    pub fusion_pre: Vec<f64>,
    pub fused: Vec<f64>,
    pub logit_a: f64,
    pub logits_b: Vec<f64>,
}

impl Activations {
    /// Every ReLU input, for kink detection in gradient checks.
    pub fn pre_activations(&self) -> impl Iterator<Item = f64> + '_ {
        self.text_pre
            .iter()
            .chain(&self.image_pre)
            .chain(&self.fusion_pre)
            .copied()
    }
}

fn check_example(params: &Params, ex: &Example) -> Result<()> {
    let cfg = &params.config;
    if ex.tokens.ids.len() != cfg.seq_len || ex.tokens.mask.len() != cfg.seq_len {
        return Err(Error::Shape(format!(
            "token sequence length {} != {}",
            ex.tokens.ids.len(),
            cfg.seq_len
        )));
    }
    if let Some(id) = ex
        .tokens
        .ids
        .iter()
        .find(|&&id| id as usize >= cfg.vocab_size)
    {
        return Err(Error::Shape(format!(
            "token id {id} outside vocabulary of {}",
            cfg.vocab_size
        )));
    }
    let img = &ex.image;
    if img.height != cfg.image_size
        || img.width != cfg.image_size
        || img.data.len() != 3 * cfg.image_size * cfg.image_size
    {
        return Err(Error::Shape(format!(
            "image {}x{} != configured {}x{}",
            img.height, img.width, cfg.image_size, cfg.image_size
        )));
    }
    if img.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("image pixel".into()));
    }
    Ok(())
}

/// Mean of all flattened patches; each patch is laid out channel, row, column.
fn patch_mean(img: &ImageTensor, p: usize) -> Vec<f64> {
    let side = img.width / p;
    let mut acc = vec![0.0; 3 * p * p];
    for py in 0..side {
        for px in 0..side {
            let mut k = 0;
            for c in 0..3 {
                for dy in 0..p {
                    for dx in 0..p {
                        acc[k] += img.at(c, py * p + dy, px * p + dx);
                        k += 1;
                    }
                }
            }
        }
    }
    let n = (side * side) as f64;
    acc.iter_mut().for_each(|v| *v /= n);
    acc
}

pub(crate) fn forward_one(params: &Params, ex: &Example) -> Activations {
    let cfg = &params.config;

    let mut text_mean = vec![0.0; cfg.text_dim];
    let mut text_real = 0;
    for id in ex.tokens.real_tokens() {
        for (m, e) in text_mean.iter_mut().zip(params.embedding.row(id as usize)) {
            *m += e;
        }
        text_real += 1;
    }
    if text_real > 0 {
        text_mean.iter_mut().for_each(|m| *m /= text_real as f64);
    }
    let text_pre = affine(&text_mean, &params.text_w, &params.text_b);
    let text_feat = relu(&text_pre);

    // The patch projection is affine, so projecting the mean patch equals
    // averaging the per-patch projections.
    let patch_mean = patch_mean(&ex.image, cfg.patch_size);
    let patch_proj = affine(&patch_mean, &params.patch_w, &params.patch_b);
    let image_pre = affine(&patch_proj, &params.image_w, &params.image_b);
    let image_feat = relu(&image_pre);

    let fusion_in: Vec<f64> = text_feat.iter().chain(&image_feat).copied().collect();
    let fusion_pre = affine(&fusion_in, &params.fusion_w, &params.fusion_b);
    let fused = relu(&fusion_pre);
    let logit_a = affine(&fused, &params.head_a_w, &params.head_a_b)[0];
    let logits_b = affine(&fused, &params.head_b_w, &params.head_b_b);

    Activations {
        text_mean,
        text_real,
        text_pre,
        patch_mean,
        patch_proj,
        image_pre,
        fusion_in,
        fusion_pre,
        fused,
        logit_a,
        logits_b,
    }
}

pub(crate) fn forward_cached<E: Borrow<Example>>(
    params: &Params,
    batch: &[E],
) -> Result<Vec<Activations>> {
    for ex in batch {
        check_example(params, ex.borrow())?;
    }
    let acts: Vec<Activations> = batch
        .iter()
        .map(|ex| forward_one(params, ex.borrow()))
        .collect();
    if acts
        .iter()
        .any(|a| !a.logit_a.is_finite() || a.logits_b.iter().any(|z| !z.is_finite()))
    {
        return Err(Error::NonFinite(
            "forward produced a non-finite logit".into(),
        ));
    }
    Ok(acts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOut {
    pub logit_a: Vec<f64>,
    pub logits_b: Vec<Vec<f64>>,
    pub fused: Vec<Vec<f64>>,
}

impl ForwardOut {
    pub fn len(&self) -> usize {
        self.logit_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logit_a.is_empty()
    }

    pub(crate) fn from_activations(acts: Vec<Activations>) -> Self {
        let mut out = ForwardOut {
            logit_a: Vec::with_capacity(acts.len()),
            logits_b: Vec::with_capacity(acts.len()),
            fused: Vec::with_capacity(acts.len()),
        };
        for a in acts {
            out.logit_a.push(a.logit_a);
            out.logits_b.push(a.logits_b);
            out.fused.push(a.fused);
        }
        out
    }
}

pub fn forward<E: Borrow<Example>>(params: &Params, batch: &[E]) -> Result<ForwardOut> {
    forward_cached(params, batch).map(ForwardOut::from_activations)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub id: String,
    pub pred_a: u8,
    /// Probability of the predicted Task-A class, in [0.5, 1].
    pub conf_a: f64,
    /// Class 0 whenever `pred_a` is 0, otherwise the Task-B argmax.
    pub pred_b: u8,
    /// `conf_a` when `pred_a` is 0, otherwise the largest Task-B softmax
    /// probability. Always in [1/6, 1].
    pub conf_b: f64,
}

impl PredictionRecord {
    /// Task B is decoded hierarchically: the Task-B head only ever trains on
    /// generated images, so its class-0 logit carries no signal and an image
    /// judged real by Task A is attributed to class 0 with Task A's confidence.
    pub fn from_logits(id: impl Into<String>, logit_a: f64, logits_b: &[f64]) -> Self {
        let p = sigmoid(logit_a);
        let pred_a = (p > 0.5) as u8;
        let conf_a = p.max(1.0 - p);
        let (pred_b, conf_b) = if pred_a == 0 {
            (0, conf_a)
        } else {
            let probs = softmax(logits_b);
            let mut best = 0;
            for (k, &q) in probs.iter().enumerate() {
                if q > probs[best] {
                    best = k;
                }
            }
            (best as u8, probs[best])
        };
        PredictionRecord {
            id: id.into(),
            pred_a,
            conf_a,
            pred_b,
            conf_b,
        }
    }
}

const PREDICT_CHUNK: usize = 256;

pub fn predict_with_confidence(params: &Params, data: &Dataset) -> Result<Vec<PredictionRecord>> {
    let mut records = Vec::with_capacity(data.len());
    for (samples, examples) in data
        .samples
        .chunks(PREDICT_CHUNK)
        .zip(data.examples.chunks(PREDICT_CHUNK))
    {
        let out = forward(params, examples)?;
        for (i, s) in samples.iter().enumerate() {
            records.push(PredictionRecord::from_logits(
                &s.id,
                out.logit_a[i],
                &out.logits_b[i],
            ));
        }
    }
    Ok(records)
}

pub const PREDICTIONS_HEADER: [&str; 5] = ["id", "pred_a", "conf_a", "pred_b", "conf_b"];

/// CSV with 6-decimal confidences and LF line endings.
pub fn predictions_csv(records: &[PredictionRecord]) -> Result<Vec<u8>> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    writer.write_record(PREDICTIONS_HEADER)?;
    for r in records {
        writer.write_record([
            r.id.as_str(),
            &r.pred_a.to_string(),
            &crate::fixed::format6(r.conf_a),
            &r.pred_b.to_string(),
            &crate::fixed::format6(r.conf_b),
        ])?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::Data(format!("flushing predictions: {e}")))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let err = |line: u64, msg: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        msg,
    };
    if reader
        .headers()?
        .iter()
        .ne(PREDICTIONS_HEADER.iter().copied())
    {
        return Err(err(
            1,
            format!("expected header {:?}", PREDICTIONS_HEADER.join(",")),
        ));
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let class = |i: usize, max: u8| {
            row[i]
                .parse::<u8>()
                .ok()
                .filter(|&v| v <= max)
                .ok_or_else(|| {
                    err(
                        line,
                        format!("{} out of range: {:?}", PREDICTIONS_HEADER[i], &row[i]),
                    )
                })
        };
        let conf = |i: usize| {
            row[i]
                .parse::<f64>()
                .ok()
                .filter(|v| (0.0..=1.0).contains(v))
                .ok_or_else(|| {
                    err(
                        line,
                        format!(
                            "{} must lie in [0, 1]: {:?}",
                            PREDICTIONS_HEADER[i], &row[i]
                        ),
                    )
                })
        };
        out.push(PredictionRecord {
            id: row[0].to_string(),
            pred_a: class(1, 1)?,
            conf_a: conf(2)?,
            pred_b: class(3, (NUM_CLASSES - 1) as u8)?,
            conf_b: conf(4)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_example, tiny_config};
    use proptest::prelude::*;

    #[test]
    fn init_contract() {
        let cfg = ModelConfig::default();
        let p = init_params(&cfg, 11).unwrap();
        for (name, t) in p.named() {
            if t.shape().len() == 1 {
                assert!(t.data().iter().all(|&b| b == 0.0), "{name}");
            }
        }
        assert!(p.embedding.row(PAD as usize).iter().all(|&v| v == 0.0));
        // fusion input is text_dim + image_dim = 64 wide, output shared_dim = 64
        let bound = (6.0f64 / (64.0 + 64.0)).sqrt();
        assert!(p.fusion_w.max_abs() <= bound);
        assert!(p.fusion_w.max_abs() > 0.9 * bound);
        assert_eq!(p, init_params(&cfg, 11).unwrap());
        assert_ne!(p, init_params(&cfg, 12).unwrap());
        for ((_, shape), t) in cfg.param_shapes().iter().zip(p.tensors()) {
            assert_eq!(shape.as_slice(), t.shape());
        }
    }

    #[test]
    fn rejects_bad_config() {
        let bad = ModelConfig {
            image_size: 30,
            ..ModelConfig::default()
        };
        assert!(init_params(&bad, 0).is_err());
        let bad = ModelConfig {
            num_classes: 5,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn batch_shapes() {
        let cfg = tiny_config();
        let p = init_params(&cfg, 1).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        let batch: Vec<Example> = (0..5).map(|_| random_example(&cfg, &mut rng)).collect();
        let out = forward(&p, &batch).unwrap();
        assert_eq!(out.logit_a.len(), 5);
        assert!(out.logits_b.iter().all(|l| l.len() == 6));
        assert!(out.fused.iter().all(|f| f.len() == cfg.shared_dim));
    }

    #[test]
    fn zero_heads_give_uniform_outputs() {
        let cfg = tiny_config();
        let mut p = init_params(&cfg, 1).unwrap();
        for t in [
            &mut p.head_a_w,
            &mut p.head_a_b,
            &mut p.head_b_w,
            &mut p.head_b_b,
        ] {
            t.data_mut().fill(0.0);
        }
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
        let batch: Vec<Example> = (0..4).map(|_| random_example(&cfg, &mut rng)).collect();
        let out = forward(&p, &batch).unwrap();
        for (za, zb) in out.logit_a.iter().zip(&out.logits_b) {
            assert_eq!(sigmoid(*za), 0.5);
            assert!(softmax(zb).iter().all(|&q| (q - 1.0 / 6.0).abs() < 1e-15));
        }
    }

    #[test]
    fn duplicate_rows_match_and_permutation_commutes() {
        let cfg = tiny_config();
        let p = init_params(&cfg, 3).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(9);
        let a = random_example(&cfg, &mut rng);
        let b = random_example(&cfg, &mut rng);
        let out = forward(&p, &[&a, &b, &a]).unwrap();
        assert_eq!(out.logit_a[0], out.logit_a[2]);
        assert_eq!(out.logits_b[0], out.logits_b[2]);
        let swapped = forward(&p, &[&b, &a, &a]).unwrap();
        assert_eq!(swapped.logit_a[0], out.logit_a[1]);
        assert_eq!(swapped.logits_b[1], out.logits_b[0]);
    }

    #[test]
    fn shape_errors() {
        let cfg = tiny_config();
        let p = init_params(&cfg, 1).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        let mut ex = random_example(&cfg, &mut rng);
        ex.tokens.ids[1] = 99;
        assert!(matches!(forward(&p, &[&ex]), Err(Error::Shape(_))));
        let mut ex = random_example(&cfg, &mut rng);
        ex.image = ImageTensor::zeros(4, 4);
        assert!(matches!(forward(&p, &[&ex]), Err(Error::Shape(_))));
        let mut ex = random_example(&cfg, &mut rng);
        ex.image.data[3] = f64::NAN;
        assert!(matches!(forward(&p, &[&ex]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn prediction_examples() {
        let zero = [0.0; 6];
        let r = PredictionRecord::from_logits("x", 2.0, &zero);
        assert_eq!(r.pred_a, 1);
        // 1 / (1 + e^-2)
        assert!((r.conf_a - 0.880_797_077_977_882_3).abs() < 1e-15);
        let r = PredictionRecord::from_logits("x", -2.0, &zero);
        assert_eq!(r.pred_a, 0);
        assert!((r.conf_a - 0.880_797_077_977_882_3).abs() < 1e-15);
        // judged real, so attributed to class 0 with the Task-A confidence
        assert_eq!(r.pred_b, 0);
        assert_eq!(r.conf_b, r.conf_a);
        let r = PredictionRecord::from_logits("x", -2.0, &[0.0, 9.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(r.pred_b, 0);
        let r = PredictionRecord::from_logits("x", 2.0, &zero);
        assert_eq!(r.pred_b, 0);
        assert!((r.conf_b - 1.0 / 6.0).abs() < 1e-15);
        // σ(0) = 0.5 is not > 0.5
        assert_eq!(PredictionRecord::from_logits("x", 0.0, &zero).pred_a, 0);
        let r = PredictionRecord::from_logits("x", 1.0, &[0.0, 3.0, 1.0, 3.0, 0.0, 0.0]);
        assert_eq!(r.pred_b, 1);
    }

    #[test]
    fn predictions_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let recs = vec![
            PredictionRecord::from_logits("a", 2.0, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]),
            PredictionRecord::from_logits("b,c", -3.0, &[0.0; 6]),
        ];
        std::fs::write(&path, predictions_csv(&recs).unwrap()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("id,pred_a,conf_a,pred_b,conf_b\na,1,0.880797,1,"));
        let back = read_predictions(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(
            (back[1].id.as_str(), back[1].pred_a, back[1].pred_b),
            ("b,c", 0, 0)
        );
        std::fs::write(&path, "id,pred_a,conf_a,pred_b,conf_b\nx,1,0.9,6,0.5\n").unwrap();
        assert!(matches!(
            read_predictions(&path),
            Err(Error::Manifest { line: 2, .. })
        ));
    }

    #[test]
    fn sigmoid_extremes_stay_finite() {
        for z in [-1000.0, -30.0, 0.0, 30.0, 1000.0] {
            let s = sigmoid(z);
            assert!(s.is_finite() && (0.0..=1.0).contains(&s));
        }
        let p = softmax(&[1000.0, -1000.0, 0.0]);
        assert!(p.iter().all(|q| q.is_finite()));
        assert!(log_softmax(&[1000.0, 0.0]).iter().all(|q| q.is_finite()));
    }

    proptest! {
        #[test]
        fn sigmoid_symmetry(z in -30.0f64..30.0) {
            prop_assert!((sigmoid(-z) - (1.0 - sigmoid(z))).abs() <= 1e-15);
        }

        #[test]
        fn softmax_normalized_and_shift_invariant(
            logits in proptest::collection::vec(-50.0f64..50.0, 6),
            shift in -100.0f64..100.0,
        ) {
            let p = softmax(&logits);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
            for (a, b) in p.iter().zip(softmax(&shifted)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn confidences_in_range(za in -40.0f64..40.0, zb in proptest::collection::vec(-40.0f64..40.0, 6)) {
            let r = PredictionRecord::from_logits("x", za, &zb);
            prop_assert!((0.5..=1.0).contains(&r.conf_a));
            prop_assert!(r.conf_b >= 1.0 / 6.0 - 1e-15 && r.conf_b <= 1.0);
        }

        #[test]
        fn appended_padding_keeps_text_feature(extra in 0usize..4, seed in any::<u64>()) {
            // The same real tokens in a longer, more padded sequence.
            let base = tiny_config();
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
            let p = init_params(&ModelConfig { seq_len: base.seq_len + extra, ..base.clone() }, seed).unwrap();
            let ex = random_example(&base, &mut rng);
            let mut long = ex.clone();
            long.tokens.ids.extend(std::iter::repeat_n(0, extra));
            long.tokens.mask.extend(std::iter::repeat_n(0, extra));
            let mut p_short = p.clone();
            p_short.config.seq_len = base.seq_len;
            let dt = base.text_dim;
            prop_assert_eq!(&forward_one(&p_short, &ex).fusion_in[..dt], &forward_one(&p, &long).fusion_in[..dt]);
        }
    }
}
