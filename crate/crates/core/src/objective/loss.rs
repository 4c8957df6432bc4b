//! Task-A binary cross-entropy and the conditional Task-B cross-entropy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{log_softmax, ForwardOut};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub loss_a: f64,
    pub loss_b: f64,
    pub total: f64,
    /// Samples with label_a = 1, i.e. those contributing to `loss_b`.
    pub mask_count: usize,
}

/// ln(1 + e^z) without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn check_binary(y: &[u8]) -> Result<()> {
    match y.iter().find(|&&v| v > 1) {
        Some(v) => Err(Error::Data(format!("Task-A label must be 0 or 1, got {v}"))),
        None => Ok(()),
    }
}

/// Mean binary cross-entropy on logits: −[y ln σ(z) + (1−y) ln(1−σ(z))].
pub fn bce_with_logits(logits: &[f64], targets: &[u8]) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::Data("binary cross-entropy of an empty batch".into()));
    }
    if logits.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} logits vs {} targets",
            logits.len(),
            targets.len()
        )));
    }
    check_binary(targets)?;
    // −ln σ(z) = softplus(−z) and −ln(1 − σ(z)) = softplus(z)
    let sum: f64 = logits
        .iter()
        .zip(targets)
        .map(|(&z, &y)| if y == 1 { softplus(-z) } else { softplus(z) })
        .sum();
    Ok(sum / logits.len() as f64)
}

/// Mean cross-entropy over samples with `y_a = 1`; `(0, 0)` when none are.
pub fn conditional_ce(logits_b: &[Vec<f64>], y_b: &[u8], y_a: &[u8]) -> Result<(f64, usize)> {
    if logits_b.len() != y_b.len() || y_b.len() != y_a.len() {
        return Err(Error::Shape(format!(
            "{} logit rows, {} Task-B labels, {} Task-A labels",
            logits_b.len(),
            y_b.len(),
            y_a.len()
        )));
    }
    check_binary(y_a)?;
    let mut sum = 0.0;
    let mut count = 0;
    for ((logits, &yb), &ya) in logits_b.iter().zip(y_b).zip(y_a) {
        if ya == 0 {
            continue;
        }
        let class = yb as usize;
        if class >= logits.len() {
            return Err(Error::Data(format!(
                "Task-B label {yb} outside 0..{}",
                logits.len()
            )));
        }
        sum -= log_softmax(logits)[class];
        count += 1;
    }
    if count == 0 {
        return Ok((0.0, 0));
    }
    Ok((sum / count as f64, count))
}

pub fn total_loss(out: &ForwardOut, y_a: &[u8], y_b: &[u8]) -> Result<LossBreakdown> {
    let loss_a = bce_with_logits(&out.logit_a, y_a)?;
    let (loss_b, mask_count) = conditional_ce(&out.logits_b, y_b, y_a)?;
    Ok(LossBreakdown {
        loss_a,
        loss_b,
        total: loss_a + loss_b,
        mask_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    const LN_6: f64 = 1.791_759_469_228_055;

    #[test]
    fn bce_examples() {
        assert!((bce_with_logits(&[0.0], &[1]).unwrap() - LN_2).abs() < 1e-15);
        let tail = bce_with_logits(&[30.0], &[1]).unwrap();
        assert!((tail - 9.357_622_968_839_737e-14).abs() < 1e-26, "{tail}");
        for z in [-1000.0, 1000.0] {
            for y in [0, 1] {
                assert!(bce_with_logits(&[z], &[y]).unwrap().is_finite());
            }
        }
        assert_eq!(bce_with_logits(&[-1000.0], &[1]).unwrap(), 1000.0);
        assert!((bce_with_logits(&[0.0, 0.0], &[1, 0]).unwrap() - LN_2).abs() < 1e-15);
        assert!(bce_with_logits(&[], &[]).is_err());
        assert!(bce_with_logits(&[0.0], &[2]).is_err());
    }

    #[test]
    fn conditional_ce_examples() {
        let (l, m) = conditional_ce(&[vec![0.0; 6]], &[3], &[1]).unwrap();
        assert!((l - LN_6).abs() < 1e-15);
        assert_eq!(m, 1);
        assert_eq!(
            conditional_ce(&[vec![5.0, -2.0, 0.0, 0.0, 0.0, 0.0]], &[0], &[0]).unwrap(),
            (0.0, 0)
        );
        let (l, m) = conditional_ce(
            &[vec![0.0; 6], vec![9.0, 1.0, 0.0, 0.0, 0.0, 0.0]],
            &[2, 0],
            &[1, 0],
        )
        .unwrap();
        assert!((l - LN_6).abs() < 1e-15);
        assert_eq!(m, 1);
        assert!(conditional_ce(&[vec![0.0; 6]], &[6], &[1]).is_err());
        // out-of-range labels are only an error where the mask selects them
        assert!(conditional_ce(&[vec![0.0; 6]], &[6], &[0]).is_ok());
    }

    #[test]
    fn total_examples() {
        let out = ForwardOut {
            logit_a: vec![0.0],
            logits_b: vec![vec![0.0; 6]],
            fused: vec![vec![]],
        };
        let l = total_loss(&out, &[1], &[4]).unwrap();
        assert!((l.total - 2.484_906_649_788_000_4).abs() < 1e-15);
        let real = ForwardOut {
            logit_a: vec![0.3, -1.2],
            logits_b: vec![vec![1.0; 6], vec![2.0; 6]],
            fused: vec![vec![], vec![]],
        };
        let l = total_loss(&real, &[0, 0], &[0, 0]).unwrap();
        assert_eq!((l.loss_b, l.mask_count), (0.0, 0));
        assert_eq!(l.total, l.loss_a);
    }

    proptest! {
        #[test]
        fn logit_flip_symmetry(z in proptest::collection::vec(-50.0f64..50.0, 1..16), seed in any::<u64>()) {
            let y: Vec<u8> = (0..z.len()).map(|i| ((seed >> (i % 64)) & 1) as u8).collect();
            let flipped: Vec<f64> = z.iter().map(|v| -v).collect();
            let y_flip: Vec<u8> = y.iter().map(|v| 1 - v).collect();
            let a = bce_with_logits(&z, &y).unwrap();
            let b = bce_with_logits(&flipped, &y_flip).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn masked_rows_never_matter(
            rows in proptest::collection::vec(proptest::collection::vec(-20.0f64..20.0, 6), 4),
            noise in proptest::collection::vec(-20.0f64..20.0, 6),
        ) {
            let y_a = [1, 0, 1, 0];
            let y_b = [3, 0, 5, 0];
            let mut perturbed = rows.clone();
            perturbed[1] = noise.clone();
            perturbed[3] = noise;
            prop_assert_eq!(conditional_ce(&rows, &y_b, &y_a).unwrap(), conditional_ce(&perturbed, &y_b, &y_a).unwrap());
            prop_assert_eq!(conditional_ce(&rows, &y_b, &[0, 0, 0, 0]).unwrap(), (0.0, 0));
        }
    }
}
