//! Multi-task loss, gradients, AdamW and the training loop.

pub mod gradcheck;
pub mod gradients;
pub mod loss;
pub mod optim;
pub mod train;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use gradients::backward;
pub use loss::{bce_with_logits, conditional_ce, total_loss, LossBreakdown};
pub use optim::{adamw_step, OptimizerState, SelectionMetric, TrainConfig};
pub use train::{
    evaluate, select_best_epoch, train, EpochRecord, TrainOutcome, BEST_CHECKPOINT, HISTORY_FILE,
    LAST_CHECKPOINT,
};

use crate::corpus::Sample;
use crate::error::{Error, Result};

/// Task-A and Task-B targets pulled from labeled samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    pub a: Vec<u8>,
    pub b: Vec<u8>,
}

impl Labels {
    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        let mut labels = Labels {
            a: Vec::with_capacity(samples.len()),
            b: Vec::with_capacity(samples.len()),
        };
        for s in samples {
            match (s.label_a, s.label_b) {
                (Some(a), Some(b)) => {
                    labels.a.push(a);
                    labels.b.push(b);
                }
                _ => return Err(Error::Data(format!("sample {:?} is unlabeled", s.id))),
            }
        }
        Ok(labels)
    }
}
