//! Central finite-difference verification of [`backward`].
//!
//! Every fusion and head coordinate is checked, plus a random sample of
//! encoder coordinates. A coordinate is skipped when the perturbation brings
//! any ReLU input within `kink_margin` of zero or flips its sign, since the
//! loss is not differentiable there.

use std::borrow::Borrow;
use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::Serialize;

use super::gradients::backward;
use super::loss::total_loss;
use crate::corpus::Example;
use crate::error::Result;
use crate::model::{forward_cached, ForwardOut, Params, PARAM_NAMES};
use crate::tensor::affine;

/// Tensors ahead of the fusion layer in canonical order.
const ENCODER_TENSORS: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    pub tolerance: f64,
    /// Distinct encoder coordinates to sample.
    pub encoder_samples: usize,
    pub seed: u64,
    /// Relative step: h = step · max(1, |θ|).
    pub step: f64,
    pub kink_margin: f64,
    /// Lower bound on the relative-error denominator, so round-off in the
    /// finite difference does not dominate near-zero gradients.
    pub denominator_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            tolerance: 1e-5,
            encoder_samples: 256,
            seed: 0,
            step: 1e-6,
            kink_margin: 1e-7,
            denominator_floor: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub excluded_kinks: usize,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

struct Probe {
    loss: f64,
    pre: Vec<f64>,
}

impl Probe {
    fn near_kink(&self, margin: f64) -> bool {
        self.pre.iter().any(|p| p.abs() < margin)
    }

    fn same_signs(&self, other: &Probe) -> bool {
        self.pre
            .iter()
            .zip(&other.pre)
            .all(|(a, b)| (*a > 0.0) == (*b > 0.0))
    }
}

fn probe_full<E: Borrow<Example>>(
    params: &Params,
    batch: &[E],
    y_a: &[u8],
    y_b: &[u8],
) -> Result<Probe> {
    let acts = forward_cached(params, batch)?;
    let pre = acts.iter().flat_map(|a| a.pre_activations()).collect();
    let out = ForwardOut::from_activations(acts);
    Ok(Probe {
        loss: total_loss(&out, y_a, y_b)?.total,
        pre,
    })
}

/// Same loss, starting from cached fusion inputs (valid while only fusion
/// and head parameters move).
fn probe_head(params: &Params, fusion_in: &[Vec<f64>], y_a: &[u8], y_b: &[u8]) -> Result<Probe> {
    let mut out = ForwardOut {
        logit_a: Vec::new(),
        logits_b: Vec::new(),
        fused: Vec::new(),
    };
    let mut pre = Vec::new();
    for x in fusion_in {
        let fusion_pre = affine(x, &params.fusion_w, &params.fusion_b);
        let fused: Vec<f64> = fusion_pre.iter().map(|v| v.max(0.0)).collect();
        out.logit_a
            .push(affine(&fused, &params.head_a_w, &params.head_a_b)[0]);
        out.logits_b
            .push(affine(&fused, &params.head_b_w, &params.head_b_b));
        pre.extend(fusion_pre);
    }
    Ok(Probe {
        loss: total_loss(&out, y_a, y_b)?.total,
        pre,
    })
}

pub fn grad_check<E: Borrow<Example>>(
    params: &Params,
    batch: &[E],
    y_a: &[u8],
    y_b: &[u8],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let (_, analytic) = backward(params, batch, y_a, y_b)?;
    let fusion_in: Vec<Vec<f64>> = forward_cached(params, batch)?
        .into_iter()
        .map(|a| a.fusion_in)
        .collect();

    let mut coords: Vec<(usize, usize)> = Vec::new();
    let tensors = params.tensors();
    let encoder_total: usize = tensors[..ENCODER_TENSORS].iter().map(|t| t.len()).sum();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(opts.seed);
    let mut picked = BTreeSet::new();
    while picked.len() < opts.encoder_samples.min(encoder_total) {
        let t = rng.random_range(0..ENCODER_TENSORS);
        if tensors[t].is_empty() {
            continue;
        }
        picked.insert((t, rng.random_range(0..tensors[t].len())));
    }
    coords.extend(picked);
    for (t, tensor) in tensors.iter().enumerate().skip(ENCODER_TENSORS) {
        coords.extend((0..tensor.len()).map(|i| (t, i)));
    }

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_index: None,
        checked: 0,
        excluded_kinks: 0,
        tolerance: opts.tolerance,
        passed: true,
    };
    for (t, i) in coords {
        let theta = params.tensors()[t].data()[i];
        let h = opts.step * theta.abs().max(1.0);
        let probe = |work: &mut Params, value: f64| -> Result<Probe> {
            work.tensors_mut()[t].data_mut()[i] = value;
            if t < ENCODER_TENSORS {
                probe_full(work, batch, y_a, y_b)
            } else {
                probe_head(work, &fusion_in, y_a, y_b)
            }
        };
        let plus = probe(&mut work, theta + h)?;
        let minus = probe(&mut work, theta - h)?;
        work.tensors_mut()[t].data_mut()[i] = theta;

        if plus.near_kink(opts.kink_margin)
            || minus.near_kink(opts.kink_margin)
            || !plus.same_signs(&minus)
        {
            report.excluded_kinks += 1;
            continue;
        }
        let numeric = (plus.loss - minus.loss) / (2.0 * h);
        let err = relative_error(
            analytic.tensors()[t].data()[i],
            numeric,
            opts.denominator_floor,
        );
        report.checked += 1;
        if err > report.max_rel_error || report.worst_param.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst_param = Some(PARAM_NAMES[t].to_string());
            report.worst_index = Some(i);
        }
    }
    report.passed = report.max_rel_error < opts.tolerance;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_probe() {
        let theta: f64 = 3.0;
        let fd = central_difference(|x| x * x, theta, 1e-6 * theta.abs().max(1.0));
        assert!((fd - 2.0 * theta).abs() < 1e-9);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(2.0, 1.0, 1e-3), 0.5);
        assert_eq!(relative_error(1e-9, 0.0, 1e-3), 1e-6);
    }
}
