//! Analytic gradients of the total loss with respect to every parameter.

use std::borrow::Borrow;

use super::loss::{total_loss, LossBreakdown};
use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::model::{forward_cached, sigmoid, softmax, ForwardOut, Params};
use crate::tensor::{accumulate_affine_grad, affine_input_grad};

fn relu_backward(g: &mut [f64], pre: &[f64]) {
    for (gi, &p) in g.iter_mut().zip(pre) {
        if p <= 0.0 {
            *gi = 0.0;
        }
    }
}

/// Loss and gradients for one labeled batch. Samples with `y_a = 0` send no
/// gradient through the Task-B head.
pub fn backward<E: Borrow<Example>>(
    params: &Params,
    batch: &[E],
    y_a: &[u8],
    y_b: &[u8],
) -> Result<(LossBreakdown, Params)> {
    let acts = forward_cached(params, batch)?;
    let out = ForwardOut {
        logit_a: acts.iter().map(|a| a.logit_a).collect(),
        logits_b: acts.iter().map(|a| a.logits_b.clone()).collect(),
        fused: Vec::new(),
    };
    let loss = total_loss(&out, y_a, y_b)?;
    if !loss.total.is_finite() {
        return Err(Error::NonFinite(format!("loss {:?}", loss)));
    }

    let cfg = &params.config;
    let n = batch.len() as f64;
    let m = loss.mask_count as f64;
    let mut grads = Params::zeros(cfg);

    for (i, a) in acts.iter().enumerate() {
        let g_logit_a = (sigmoid(a.logit_a) - y_a[i] as f64) / n;
        accumulate_affine_grad(
            &mut grads.head_a_w,
            &mut grads.head_a_b,
            &a.fused,
            &[g_logit_a],
        );
        let mut g_fused: Vec<f64> = params
            .head_a_w
            .data()
            .iter()
            .map(|w| w * g_logit_a)
            .collect();

        if y_a[i] == 1 {
            let mut g_logits_b = softmax(&a.logits_b);
            g_logits_b[y_b[i] as usize] -= 1.0;
            g_logits_b.iter_mut().for_each(|g| *g /= m);
            accumulate_affine_grad(
                &mut grads.head_b_w,
                &mut grads.head_b_b,
                &a.fused,
                &g_logits_b,
            );
            for (gf, gb) in g_fused
                .iter_mut()
                .zip(affine_input_grad(&params.head_b_w, &g_logits_b))
            {
                *gf += gb;
            }
        }

        relu_backward(&mut g_fused, &a.fusion_pre);
        accumulate_affine_grad(
            &mut grads.fusion_w,
            &mut grads.fusion_b,
            &a.fusion_in,
            &g_fused,
        );
        let g_in = affine_input_grad(&params.fusion_w, &g_fused);
        let (g_text, g_image) = g_in.split_at(cfg.text_dim);

        let mut g_text = g_text.to_vec();
        relu_backward(&mut g_text, &a.text_pre);
        accumulate_affine_grad(&mut grads.text_w, &mut grads.text_b, &a.text_mean, &g_text);
        if a.text_real > 0 {
            let g_mean = affine_input_grad(&params.text_w, &g_text);
            let scale = 1.0 / a.text_real as f64;
            for id in batch[i].borrow().tokens.real_tokens() {
                for (e, g) in grads.embedding.row_mut(id as usize).iter_mut().zip(&g_mean) {
                    *e += g * scale;
                }
            }
        }

        let mut g_image = g_image.to_vec();
        relu_backward(&mut g_image, &a.image_pre);
        accumulate_affine_grad(
            &mut grads.image_w,
            &mut grads.image_b,
            &a.patch_proj,
            &g_image,
        );
        let g_proj = affine_input_grad(&params.image_w, &g_image);
        accumulate_affine_grad(
            &mut grads.patch_w,
            &mut grads.patch_b,
            &a.patch_mean,
            &g_proj,
        );
    }

    if !grads.all_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, init_params};
    use crate::objective::gradcheck::{
        central_difference, grad_check, relative_error, GradCheckOptions,
    };
    use crate::testutil::{random_example, tiny_config};
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn batch(n: usize, seed: u64) -> Vec<Example> {
        let cfg = tiny_config();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        (0..n).map(|_| random_example(&cfg, &mut rng)).collect()
    }

    fn zero_heads(p: &mut Params) {
        for t in [
            &mut p.head_a_w,
            &mut p.head_a_b,
            &mut p.head_b_w,
            &mut p.head_b_b,
        ] {
            t.data_mut().fill(0.0);
        }
    }

    #[test]
    fn symmetric_batch_cancels_head_a_bias() {
        let mut p = init_params(&tiny_config(), 3).unwrap();
        zero_heads(&mut p);
        let ex = batch(1, 4).remove(0);
        let (_, g) = backward(&p, &[&ex, &ex], &[0, 1], &[0, 2]).unwrap();
        assert_eq!(g.head_a_b.data(), &[0.0]);
        assert!(g.head_a_w.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn all_real_batch_leaves_head_b_untouched() {
        let p = init_params(&tiny_config(), 1).unwrap();
        let (loss, g) = backward(&p, &batch(5, 2), &[0; 5], &[0; 5]).unwrap();
        assert_eq!(loss.loss_b, 0.0);
        assert!(g
            .head_b_w
            .data()
            .iter()
            .chain(g.head_b_b.data())
            .all(|&v| v == 0.0));
        assert!(g.head_a_b.data()[0] != 0.0);
    }

    #[test]
    fn masked_task_b_logits_do_not_matter() {
        // Changing the Task-B head changes logits_b for every sample, but
        // only samples with y_a = 1 may feel it.
        let p = init_params(&tiny_config(), 8).unwrap();
        let ex = batch(3, 9);
        let y_a = [0, 1, 0];
        let y_b = [0, 4, 0];
        let (_, g) = backward(&p, &ex, &y_a, &y_b).unwrap();
        let (_, g_solo) = backward(&p, &ex[1..2], &[1], &[4]).unwrap();
        // Task-B loss averages over the mask, so the lone generated sample
        // carries the whole Task-B gradient in both batches.
        assert_eq!(g.head_b_w, g_solo.head_b_w);
        assert_eq!(g.head_b_b, g_solo.head_b_b);
    }

    #[test]
    fn head_gradients_match_naive_finite_differences() {
        // Heads sit after the last ReLU, so the loss is smooth in them and
        // no kink handling is needed.
        let p = init_params(&tiny_config(), 21).unwrap();
        let ex = batch(6, 22);
        let y_a = [1, 0, 1, 1, 0, 1];
        let y_b = [3, 0, 1, 5, 0, 3];
        let (_, g) = backward(&p, &ex, &y_a, &y_b).unwrap();
        let loss_at = |q: &Params| {
            total_loss(&forward(q, &ex).unwrap(), &y_a, &y_b)
                .unwrap()
                .total
        };
        for t in 9..13 {
            for i in 0..p.tensors()[t].len() {
                let theta = p.tensors()[t].data()[i];
                let numeric = central_difference(
                    |x| {
                        let mut q = p.clone();
                        q.tensors_mut()[t].data_mut()[i] = x;
                        loss_at(&q)
                    },
                    theta,
                    1e-6 * theta.abs().max(1.0),
                );
                let analytic = g.tensors()[t].data()[i];
                assert!(
                    relative_error(analytic, numeric, 1e-3) < 1e-6,
                    "tensor {t} index {i}: {analytic} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn every_coordinate_passes_grad_check() {
        let cfg = tiny_config();
        for seed in 0..3 {
            let p = init_params(&cfg, seed).unwrap();
            let ex = batch(8, 100 + seed);
            let y_a = [1, 0, 1, 1, 0, 1, 1, 0];
            let y_b = [1, 0, 2, 3, 0, 4, 5, 0];
            let opts = GradCheckOptions {
                encoder_samples: usize::MAX,
                seed,
                ..GradCheckOptions::default()
            };
            let report = grad_check(&p, &ex, &y_a, &y_b, &opts).unwrap();
            assert!(report.passed, "{report:?}");
            assert_eq!(report.checked + report.excluded_kinks, p.num_values());
        }
    }
}
