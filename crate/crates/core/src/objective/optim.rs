//! AdamW with bias correction and decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Params;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    /// Validation weighted-F1 of Task A.
    #[default]
    TaskAWeightedF1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub selection_metric: SelectionMetric,
}

/// Fine-tuning values: lr 2e-5, weight decay 0.01, batch 256, 8 epochs.
impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-5,
            weight_decay: 0.01,
            batch_size: 256,
            epochs: 8,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            selection_metric: SelectionMetric::TaskAWeightedF1,
        }
    }
}

impl TrainConfig {
    /// Settings for training the small encoders from scratch: lr 1e-3, batch 64.
    pub fn desk_scale() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 64,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!(
                "betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            ));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1".into());
        }
        Ok(())
    }
}

/// First and second moments mirroring the parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Params,
    pub v: Params,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &Params) -> Self {
        OptimizerState {
            m: Params::zeros(&params.config),
            v: Params::zeros(&params.config),
            step: 0,
        }
    }
}

/// One AdamW update of a flat parameter slice at (1-based) step `t`.
pub fn adamw_update(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &TrainConfig,
) {
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    for (((p, &g), mi), vi) in theta
        .iter_mut()
        .zip(grad)
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
        *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
        let m_hat = *mi / c1;
        let v_hat = *vi / c2;
        *p = *p * decay - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

pub fn adamw_step(
    params: &mut Params,
    grads: &Params,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<()> {
    let shapes_match = |a: &Params, b: &Params| {
        a.tensors()
            .iter()
            .zip(b.tensors())
            .all(|(x, y)| x.shape() == y.shape())
    };
    if !shapes_match(params, grads)
        || !shapes_match(params, &state.m)
        || !shapes_match(params, &state.v)
    {
        return Err(Error::Shape(
            "gradient or optimizer state does not mirror the parameters".into(),
        ));
    }
    state.step += 1;
    let t = state.step;
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut())
    {
        adamw_update(p.data_mut(), g.data(), m.data_mut(), v.data_mut(), t, cfg);
    }
    Ok(())
}
