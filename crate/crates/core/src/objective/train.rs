//! Epoch loop: shuffled mini-batches, AdamW, per-epoch validation, and
//! selection of the epoch with the best validation Task-A weighted-F1.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::gradients::backward;
use super::loss::{total_loss, LossBreakdown};
use super::optim::{adamw_step, OptimizerState, TrainConfig};
use super::Labels;
use crate::corpus::{Dataset, Example, Vocab};
use crate::error::{Error, Result};
use crate::fixed;
use crate::metrics::MetricsReport;
use crate::model::{forward, init_params, ForwardOut, ModelConfig, Params, PredictionRecord};
use crate::persist::{save_checkpoint, write_atomic, CheckpointMeta};

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const HISTORY_FILE: &str = "history.json";

const SHUFFLE_STREAM: u64 = 0x5348_5546_464c_4521;
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(serialize_with = "fixed::serialize")]
    pub train_loss: f64,
    #[serde(serialize_with = "fixed::serialize")]
    pub train_loss_a: f64,
    #[serde(serialize_with = "fixed::serialize")]
    pub train_loss_b: f64,
    #[serde(serialize_with = "fixed::serialize")]
    pub val_loss: f64,
    /// This epoch became the new best.
    pub improved: bool,
    pub val: MetricsReport,
}

impl EpochRecord {
    pub fn selection_value(&self) -> f64 {
        self.val.task_a.weighted_f1
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best epoch.
    pub params: Params,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub last: Params,
    pub history: Vec<EpochRecord>,
}

/// 1-based index of the highest value; ties go to the earliest epoch.
pub fn select_best_epoch(history: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in history.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i + 1, v));
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::Data("cannot select from an empty history".into()))
}

/// Validation metrics and loss for a labeled dataset.
pub fn evaluate(params: &Params, data: &Dataset) -> Result<(MetricsReport, LossBreakdown)> {
    let labels = Labels::from_samples(&data.samples)?;
    let mut out = ForwardOut {
        logit_a: Vec::with_capacity(data.len()),
        logits_b: Vec::with_capacity(data.len()),
        fused: Vec::new(),
    };
    for chunk in data.examples.chunks(EVAL_CHUNK) {
        let part = forward(params, chunk)?;
        out.logit_a.extend(part.logit_a);
        out.logits_b.extend(part.logits_b);
    }
    let loss = total_loss(&out, &labels.a, &labels.b)?;
    let preds: Vec<PredictionRecord> = data
        .samples
        .iter()
        .zip(out.logit_a.iter().zip(&out.logits_b))
        .map(|(s, (&za, zb))| PredictionRecord::from_logits(&s.id, za, zb))
        .collect();
    let pred_a: Vec<u8> = preds.iter().map(|p| p.pred_a).collect();
    let pred_b: Vec<u8> = preds.iter().map(|p| p.pred_b).collect();
    Ok((
        MetricsReport::from_labels(&labels.a, &pred_a, &labels.b, &pred_b)?,
        loss,
    ))
}

pub fn history_json(history: &[EpochRecord]) -> Result<String> {
    Ok(serde_json::to_string_pretty(history)? + "\n")
}

/// Trains from a seeded initialization. With `out_dir`, every epoch
/// overwrites `last.ckpt` and `history.json`, and `best.ckpt` whenever the
/// selection metric strictly improves.
pub fn train(
    train_set: &Dataset,
    val_set: &Dataset,
    vocab: &Vocab,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if vocab.len() != model_cfg.vocab_size {
        return Err(Error::Config(format!(
            "model vocab_size {} does not match vocabulary of {} tokens",
            model_cfg.vocab_size,
            vocab.len()
        )));
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let labels = Labels::from_samples(&train_set.samples)?;
    Labels::from_samples(&val_set.samples)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut params = init_params(model_cfg, cfg.seed)?;
    let mut state = OptimizerState::new(&params);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history: Vec<EpochRecord> = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Params)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut sum_a, mut sum_b) = (0.0, 0.0, 0.0);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_set.examples[i]).collect();
            let y_a: Vec<u8> = chunk.iter().map(|&i| labels.a[i]).collect();
            let y_b: Vec<u8> = chunk.iter().map(|&i| labels.b[i]).collect();
            let (loss, grads) = backward(&params, &batch, &y_a, &y_b).map_err(|e| match e {
                Error::NonFinite(m) => {
                    Error::NonFinite(format!("epoch {epoch}, batch {}: {m}", b + 1))
                }
                other => other,
            })?;
            adamw_step(&mut params, &grads, &mut state, cfg)?;
            let w = chunk.len() as f64;
            sum += loss.total * w;
            sum_a += loss.loss_a * w;
            sum_b += loss.loss_b * w;
        }
        if !params.all_finite() {
            return Err(Error::NonFinite(format!(
                "parameters diverged in epoch {epoch}"
            )));
        }

        let (val, val_loss) = evaluate(&params, val_set)?;
        let metric = val.task_a.weighted_f1;
        let improved = best.as_ref().is_none_or(|(_, b, _)| metric > *b);
        if improved {
            best = Some((epoch, metric, params.clone()));
        }
        let n = train_set.len() as f64;
        history.push(EpochRecord {
            epoch,
            train_loss: sum / n,
            train_loss_a: sum_a / n,
            train_loss_b: sum_b / n,
            val_loss: val_loss.total,
            improved,
            val,
        });

        if let Some(dir) = out_dir {
            let (best_epoch, best_metric, best_params) =
                best.as_ref().expect("best set after first epoch");
            let meta = |epoch: usize| CheckpointMeta {
                train_config: cfg.clone(),
                vocab: vocab.clone(),
                epoch,
                best_metric: Some(*best_metric),
            };
            save_checkpoint(&params, &meta(epoch), &dir.join(LAST_CHECKPOINT))?;
            if improved {
                save_checkpoint(best_params, &meta(*best_epoch), &dir.join(BEST_CHECKPOINT))?;
            }
            write_atomic(&dir.join(HISTORY_FILE), history_json(&history)?.as_bytes())?;
        }
    }

    let (best_epoch, best_metric, best_params) = best.expect("at least one epoch");
    debug_assert_eq!(
        Some(best_epoch),
        select_best_epoch(
            &history
                .iter()
                .map(EpochRecord::selection_value)
                .collect::<Vec<_>>()
        )
        .ok()
    );
    Ok(TrainOutcome {
        params: best_params,
        best_epoch,
        best_metric,
        last: params,
        history,
    })
}
