//! Confusion matrices and the accuracy / precision / recall / F1 family.
//!
//! Degenerate ratios (0/0) are reported as 0. Support-weighted averages use
//! each class's true count as its weight, so absent classes drop out.

use serde::{Deserialize, Serialize};

use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::fixed;
use crate::model::PredictionRecord;
use crate::NUM_CLASSES;

/// `counts[t][p]`: samples with true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if counts.iter().any(|row| row.len() != k) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Row sum: number of samples whose true class is `c`.
    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn predicted(&self, c: usize) -> u64 {
        self.counts.iter().map(|row| row[c]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct = (0..self.classes()).map(|c| self.counts[c][c]).sum();
        ratio(correct, self.total())
    }

    /// One-vs-rest precision, recall and F1 for class `c`.
    pub fn prf1(&self, c: usize) -> (f64, f64, f64) {
        let tp = self.counts[c][c];
        let p = ratio(tp, self.predicted(c));
        let r = ratio(tp, self.support(c));
        (p, r, harmonic(p, r))
    }

    fn weighted(&self, pick: impl Fn((f64, f64, f64)) -> f64) -> Result<f64> {
        let n = self.total();
        if n == 0 {
            return Err(Error::Data(
                "weighted average over an empty confusion matrix".into(),
            ));
        }
        // Dividing once at the end keeps a diagonal matrix at exactly 1.
        let sum: f64 = (0..self.classes())
            .map(|c| self.support(c) as f64 * pick(self.prf1(c)))
            .sum();
        Ok(sum / n as f64)
    }

    pub fn weighted_precision(&self) -> Result<f64> {
        self.weighted(|(p, _, _)| p)
    }

    pub fn weighted_recall(&self) -> Result<f64> {
        self.weighted(|(_, r, _)| r)
    }
}

pub fn confusion_matrix(y_true: &[u8], y_pred: &[u8], k: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape(format!(
            "{} true labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(k);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        let (t, p) = (t as usize, p as usize);
        if t >= k || p >= k {
            return Err(Error::Data(format!("class pair ({t}, {p}) outside 0..{k}")));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

/// Precision, recall and F1 of the positive class (1) of a 2×2 matrix.
pub fn binary_prf1(cm: &ConfusionMatrix) -> (f64, f64, f64) {
    debug_assert_eq!(cm.classes(), 2);
    cm.prf1(1)
}

/// Σ_c (support_c / n) · F1_c.
pub fn weighted_f1(cm: &ConfusionMatrix) -> Result<f64> {
    cm.weighted(|(_, _, f)| f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAMetrics {
    #[serde(serialize_with = "fixed::serialize")]
    pub accuracy: f64,
    #[serde(serialize_with = "fixed::serialize")]
    pub precision: f64,
    #[serde(serialize_with = "fixed::serialize")]
    pub recall: f64,
    #[serde(serialize_with = "fixed::serialize")]
    pub f1: f64,
    #[serde(serialize_with = "fixed::serialize")]
    pub weighted_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBMetrics {
    #[serde(serialize_with = "fixed::serialize")]
    pub accuracy: f64,
    #[serde(serialize_with = "fixed::serialize")]
    pub precision_w: f64,
    #[serde(serialize_with = "fixed::serialize")]
    pub recall_w: f64,
    #[serde(serialize_with = "fixed::serialize")]
    pub f1_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task_a: TaskAMetrics,
    pub task_b: TaskBMetrics,
    pub confusion_a: ConfusionMatrix,
    pub confusion_b: ConfusionMatrix,
    pub n: usize,
}

impl MetricsReport {
    pub fn from_labels(gold_a: &[u8], pred_a: &[u8], gold_b: &[u8], pred_b: &[u8]) -> Result<Self> {
        if gold_a.is_empty() {
            return Err(Error::Data("cannot score an empty evaluation set".into()));
        }
        let confusion_a = confusion_matrix(gold_a, pred_a, 2)?;
        let confusion_b = confusion_matrix(gold_b, pred_b, NUM_CLASSES)?;
        let (precision, recall, f1) = binary_prf1(&confusion_a);
        Ok(MetricsReport {
            task_a: TaskAMetrics {
                accuracy: confusion_a.accuracy(),
                precision,
                recall,
                f1,
                weighted_f1: weighted_f1(&confusion_a)?,
            },
            task_b: TaskBMetrics {
                accuracy: confusion_b.accuracy(),
                precision_w: confusion_b.weighted_precision()?,
                recall_w: confusion_b.weighted_recall()?,
                f1_w: weighted_f1(&confusion_b)?,
            },
            n: gold_a.len(),
            confusion_a,
            confusion_b,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Scores predictions against labeled samples in the same order. Task B is
/// scored over every sample, so real images must be predicted as class 0.
pub fn metrics_report(predictions: &[PredictionRecord], gold: &[Sample]) -> Result<MetricsReport> {
    if predictions.len() != gold.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} gold samples",
            predictions.len(),
            gold.len()
        )));
    }
    let n = gold.len();
    let (mut ga, mut pa, mut gb, mut pb) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for (p, g) in predictions.iter().zip(gold) {
        if p.id != g.id {
            return Err(Error::Data(format!(
                "prediction id {:?} does not match gold id {:?}",
                p.id, g.id
            )));
        }
        let (Some(a), Some(b)) = (g.label_a, g.label_b) else {
            return Err(Error::Data(format!("gold sample {:?} has no labels", g.id)));
        };
        ga.push(a);
        gb.push(b);
        pa.push(p.pred_a);
        pb.push(p.pred_b);
    }
    MetricsReport::from_labels(&ga, &pa, &gb, &pb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counting_example() {
        let cm = confusion_matrix(&[0, 1, 5], &[0, 1, 1], 6).unwrap();
        assert_eq!((cm.get(0, 0), cm.get(1, 1), cm.get(5, 1)), (1, 1, 1));
        assert_eq!(cm.total(), 3);
        assert_eq!(
            confusion_matrix(&[], &[], 6).unwrap(),
            ConfusionMatrix::new(6)
        );
        assert!(confusion_matrix(&[6], &[0], 6).is_err());
        assert!(confusion_matrix(&[0, 1], &[0], 6).is_err());
    }

    #[test]
    fn binary_worked_example() {
        // TP=2, FP=1, FN=0
        let cm = confusion_matrix(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        let (p, r, f1) = binary_prf1(&cm);
        assert!((p - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r, 1.0);
        assert!((f1 - 0.8).abs() < 1e-15);
        // class 0: P=1, R=1/2, F1=2/3; class 1: F1=0.8; supports 2 and 2
        assert!((weighted_f1(&cm).unwrap() - (0.5 * 2.0 / 3.0 + 0.5 * 0.8)).abs() < 1e-15);
        assert_eq!(format!("{:.6}", weighted_f1(&cm).unwrap()), "0.733333");
    }

    #[test]
    fn degenerate_conventions() {
        let cm = confusion_matrix(&[0, 1, 1], &[0, 0, 0], 2).unwrap();
        assert_eq!(binary_prf1(&cm), (0.0, 0.0, 0.0));
        let perfect = confusion_matrix(&[0, 1, 1], &[0, 1, 1], 2).unwrap();
        assert_eq!(binary_prf1(&perfect), (1.0, 1.0, 1.0));
        assert!(weighted_f1(&ConfusionMatrix::new(6)).is_err());
    }

    #[test]
    fn absent_class_has_zero_weight() {
        // Class 5 never occurs in y_true; a spurious prediction of it only
        // hurts the precision of the class it was drawn from.
        let cm = confusion_matrix(&[0, 1, 2], &[0, 1, 5], 6).unwrap();
        let expected = (1.0 + 1.0 + 0.0) / 3.0;
        assert!((weighted_f1(&cm).unwrap() - expected).abs() < 1e-15);
    }

    fn record(id: &str, a: u8, b: u8) -> PredictionRecord {
        PredictionRecord {
            id: id.into(),
            pred_a: a,
            conf_a: 1.0,
            pred_b: b,
            conf_b: 1.0,
        }
    }

    fn gold(id: &str, b: u8) -> Sample {
        Sample {
            id: id.into(),
            caption: String::new(),
            image_path: String::new(),
            label_a: Some((b > 0) as u8),
            label_b: Some(b),
        }
    }

    #[test]
    fn report_perfect_and_decoupled() {
        let g: Vec<Sample> = (0..12)
            .map(|i| gold(&i.to_string(), (i % 6) as u8))
            .collect();
        let perfect: Vec<_> = g
            .iter()
            .map(|s| record(&s.id, s.label_a.unwrap(), s.label_b.unwrap()))
            .collect();
        let r = metrics_report(&perfect, &g).unwrap();
        for v in [
            r.task_a.accuracy,
            r.task_a.precision,
            r.task_a.recall,
            r.task_a.f1,
            r.task_a.weighted_f1,
            r.task_b.accuracy,
            r.task_b.precision_w,
            r.task_b.recall_w,
            r.task_b.f1_w,
        ] {
            assert_eq!(v, 1.0);
        }
        // Task A right, Task B shifted among generators.
        let shifted: Vec<_> = g
            .iter()
            .map(|s| {
                let b = s.label_b.unwrap();
                record(
                    &s.id,
                    s.label_a.unwrap(),
                    if b == 0 { 0 } else { b % 5 + 1 },
                )
            })
            .collect();
        let r = metrics_report(&shifted, &g).unwrap();
        assert_eq!(r.task_a.f1, 1.0);
        assert!(r.task_b.f1_w < 1.0);
    }

    #[test]
    fn report_errors() {
        let g = vec![gold("a", 1)];
        assert!(metrics_report(&[record("b", 1, 1)], &g).is_err());
        assert!(metrics_report(&[], &g).is_err());
        let mut unlabeled = g.clone();
        unlabeled[0].label_a = None;
        unlabeled[0].label_b = None;
        assert!(metrics_report(&[record("a", 1, 1)], &unlabeled).is_err());
    }

    #[test]
    fn report_json_layout() {
        let g = vec![gold("a", 0), gold("b", 2)];
        let r = metrics_report(&[record("a", 0, 0), record("b", 1, 3)], &g).unwrap();
        let json = r.to_json().unwrap();
        let a = json.find("\"task_a\"").unwrap();
        let b = json.find("\"task_b\"").unwrap();
        assert!(a < b && json.find("\"confusion_a\"").unwrap() > b);
        assert!(json.contains("\"accuracy\": 1.000000"));
        // class 0 scores F1 = 1, class 2 scores 0; equal support
        assert!(json.contains("\"f1_w\": 0.500000"));
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.confusion_b, r.confusion_b);
    }

    fn labels(k: u8) -> impl Strategy<Value = Vec<(u8, u8)>> {
        proptest::collection::vec((0..k, 0..k), 1..60)
    }

    proptest! {
        #[test]
        fn metrics_in_unit_interval(pairs in labels(6)) {
            let (t, p): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let cm = confusion_matrix(&t, &p, 6).unwrap();
            for v in [cm.accuracy(), weighted_f1(&cm).unwrap(), cm.weighted_precision().unwrap(), cm.weighted_recall().unwrap()] {
                prop_assert!((0.0..=1.0 + 1e-15).contains(&v));
            }
            let diag = confusion_matrix(&t, &t, 6).unwrap();
            prop_assert_eq!(weighted_f1(&diag).unwrap(), 1.0);
        }

        #[test]
        fn weighted_f1_permutation_invariant(pairs in labels(6), perm in Just((0u8..6).collect::<Vec<_>>()).prop_shuffle()) {
            let (t, p): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let tp: Vec<u8> = t.iter().map(|&c| perm[c as usize]).collect();
            let pp: Vec<u8> = p.iter().map(|&c| perm[c as usize]).collect();
            let a = weighted_f1(&confusion_matrix(&t, &p, 6).unwrap()).unwrap();
            let b = weighted_f1(&confusion_matrix(&tp, &pp, 6).unwrap()).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn duplication_invariant(pairs in labels(6)) {
            let (t, p): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let t2: Vec<u8> = t.iter().chain(&t).copied().collect();
            let p2: Vec<u8> = p.iter().chain(&p).copied().collect();
            let a = confusion_matrix(&t, &p, 6).unwrap();
            let b = confusion_matrix(&t2, &p2, 6).unwrap();
            prop_assert!((weighted_f1(&a).unwrap() - weighted_f1(&b).unwrap()).abs() < 1e-12);
            prop_assert!((a.accuracy() - b.accuracy()).abs() < 1e-12);
            prop_assert!((a.weighted_precision().unwrap() - b.weighted_precision().unwrap()).abs() < 1e-12);
        }
    }
}
