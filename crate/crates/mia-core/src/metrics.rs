//! Evaluation metrics over classification outputs, binary masks, and binary
//! anomaly labels: one-vs-rest confusion counts, accuracy, precision,
//! recall, F1 (binary or macro averaged), and the Dice overlap coefficient.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One-vs-rest confusion counts per class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub classes: usize,
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    pub tn: Vec<u64>,
    pub total: u64,
}

/// How multi-class precision/recall/F1 are aggregated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Averaging {
    /// Positive class is class 1 of a two-class problem.
    Binary,
    /// Unweighted mean of per-class metrics.
    Macro,
}

impl Averaging {
    pub fn as_str(&self) -> &'static str {
        match self {
            Averaging::Binary => "binary",
            Averaging::Macro => "macro",
        }
    }
}

/// Flat metric summary for reports and ablation tables.
#[derive(Clone, Debug)]
pub struct MetricReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub dice: Option<f64>,
    pub averaging: Averaging,
}

impl MetricReport {
    /// Key=value block, one metric per line.
    pub fn to_kv_block(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("accuracy={}\n", self.accuracy));
        out.push_str(&format!("precision={}\n", self.precision));
        out.push_str(&format!("recall={}\n", self.recall));
        out.push_str(&format!("f1={}\n", self.f1));
        if let Some(d) = self.dice {
            out.push_str(&format!("dice={d}\n"));
        }
        out.push_str(&format!("averaging={}\n", self.averaging.as_str()));
        out
    }

    pub fn csv_header(with_dice: bool) -> &'static str {
        if with_dice {
            "accuracy,precision,recall,f1,dice"
        } else {
            "accuracy,precision,recall,f1"
        }
    }

    pub fn to_csv_row(&self) -> String {
        match self.dice {
            Some(d) => format!("{},{},{},{},{}", self.accuracy, self.precision, self.recall, self.f1, d),
            None => format!("{},{},{},{}", self.accuracy, self.precision, self.recall, self.f1),
        }
    }
}

/// Tally one-vs-rest counts for `classes` classes.
pub fn confusion_counts(pred: &[usize], truth: &[usize], classes: usize) -> Result<ConfusionCounts> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch { left: pred.len(), right: truth.len() });
    }
    for &v in pred.iter().chain(truth) {
        if v >= classes {
            return Err(Error::ClassOutOfRange { value: v, classes });
        }
    }
    let mut cc = ConfusionCounts {
        classes,
        tp: vec![0; classes],
        fp: vec![0; classes],
        fn_: vec![0; classes],
        tn: vec![0; classes],
        total: pred.len() as u64,
    };
    for (&p, &t) in pred.iter().zip(truth) {
        for c in 0..classes {
            match (p == c, t == c) {
                (true, true) => cc.tp[c] += 1,
                (true, false) => cc.fp[c] += 1,
                (false, true) => cc.fn_[c] += 1,
                (false, false) => cc.tn[c] += 1,
            }
        }
    }
    Ok(cc)
}

/// Fraction of correctly predicted samples.
pub fn accuracy(cc: &ConfusionCounts) -> Result<f64> {
    if cc.total == 0 {
        return Err(Error::EmptyInput("confusion counts"));
    }
    let correct: u64 = cc.tp.iter().sum();
    Ok(correct as f64 / cc.total as f64)
}

fn safe_div(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0 // zero-denominator convention: the metric contributes 0
    }
}

fn class_prf(cc: &ConfusionCounts, c: usize) -> (f64, f64, f64) {
    let p = safe_div(cc.tp[c] as f64, (cc.tp[c] + cc.fp[c]) as f64);
    let r = safe_div(cc.tp[c] as f64, (cc.tp[c] + cc.fn_[c]) as f64);
    let f1 = safe_div(2.0 * p * r, p + r);
    (p, r, f1)
}

/// Precision, recall, and F1 under the chosen averaging. Binary mode reads
/// the positive class (class 1); macro mode averages per-class values.
pub fn precision_recall_f1(cc: &ConfusionCounts, averaging: Averaging) -> (f64, f64, f64) {
    match averaging {
        Averaging::Binary => class_prf(cc, 1.min(cc.classes.saturating_sub(1))),
        Averaging::Macro => {
            let mut acc = (0.0, 0.0, 0.0);
            for c in 0..cc.classes {
                let (p, r, f1) = class_prf(cc, c);
                acc = (acc.0 + p, acc.1 + r, acc.2 + f1);
            }
            let k = cc.classes as f64;
            (acc.0 / k, acc.1 / k, acc.2 / k)
        }
    }
}

/// Dice overlap 2|P n G| / (|P| + |G|) between two binary masks. Two empty
/// masks count as perfect agreement (1.0).
pub fn dice_coefficient(pred_mask: &Tensor, truth_mask: &Tensor) -> Result<f64> {
    if pred_mask.dims() != truth_mask.dims() {
        return Err(Error::ShapeMismatch {
            op: "dice_coefficient",
            detail: format!("{} vs {}", pred_mask.shape(), truth_mask.shape()),
        });
    }
    let mut inter = 0u64;
    let mut p_size = 0u64;
    let mut g_size = 0u64;
    for (&p, &t) in pred_mask.data().iter().zip(truth_mask.data()) {
        if p != 0.0 && p != 1.0 {
            return Err(Error::NonBinaryInput { value: p });
        }
        if t != 0.0 && t != 1.0 {
            return Err(Error::NonBinaryInput { value: t });
        }
        p_size += p as u64;
        g_size += t as u64;
        inter += (p * t) as u64;
    }
    if p_size + g_size == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (p_size + g_size) as f64)
}

/// Full report from predicted/true class indices.
pub fn classification_report(pred: &[usize], truth: &[usize], classes: usize) -> Result<MetricReport> {
    let averaging = if classes == 2 { Averaging::Binary } else { Averaging::Macro };
    let cc = confusion_counts(pred, truth, classes)?;
    let acc = accuracy(&cc)?;
    let (p, r, f1) = precision_recall_f1(&cc, averaging);
    Ok(MetricReport { accuracy: acc, precision: p, recall: r, f1, dice: None, averaging })
}

/// Full report for binary masks: pixelwise binary counts plus Dice.
pub fn segmentation_report(pred_mask: &Tensor, truth_mask: &Tensor) -> Result<MetricReport> {
    let dice = dice_coefficient(pred_mask, truth_mask)?;
    let pred: Vec<usize> = pred_mask.data().iter().map(|&v| v as usize).collect();
    let truth: Vec<usize> = truth_mask.data().iter().map(|&v| v as usize).collect();
    let cc = confusion_counts(&pred, &truth, 2)?;
    let acc = accuracy(&cc)?;
    let (p, r, f1) = precision_recall_f1(&cc, Averaging::Binary);
    Ok(MetricReport {
        accuracy: acc,
        precision: p,
        recall: r,
        f1,
        dice: Some(dice),
        averaging: Averaging::Binary,
    })
}

/// Threshold probabilities into a {0,1} mask.
pub fn binarize_mask(prob: &Tensor, threshold: f64) -> Tensor {
    prob.map(|v| if v >= threshold { 1.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn perfect_prediction_has_no_errors() {
        let cc = confusion_counts(&[0, 1, 0, 1], &[0, 1, 0, 1], 2).unwrap();
        assert_eq!(cc.fp, vec![0, 0]);
        assert_eq!(cc.fn_, vec![0, 0]);
        assert_eq!(accuracy(&cc).unwrap(), 1.0);
        let (p, r, f1) = precision_recall_f1(&cc, Averaging::Binary);
        assert_eq!((p, r, f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn total_disagreement_counts() {
        let cc = confusion_counts(&[1, 0], &[0, 1], 2).unwrap();
        assert_eq!(cc.tp, vec![0, 0]);
        assert_eq!(cc.fp, vec![1, 1]);
        assert_eq!(cc.fn_, vec![1, 1]);
    }

    #[test]
    fn random_counts_match_brute_force_tally() {
        let mut rng = Rng::new(5);
        let pred: Vec<usize> = (0..50).map(|_| rng.below(4)).collect();
        let truth: Vec<usize> = (0..50).map(|_| rng.below(4)).collect();
        let cc = confusion_counts(&pred, &truth, 4).unwrap();
        for c in 0..4 {
            let tp = pred.iter().zip(&truth).filter(|(&p, &t)| p == c && t == c).count() as u64;
            let fp = pred.iter().zip(&truth).filter(|(&p, &t)| p == c && t != c).count() as u64;
            let fn_ = pred.iter().zip(&truth).filter(|(&p, &t)| p != c && t == c).count() as u64;
            let tn = pred.iter().zip(&truth).filter(|(&p, &t)| p != c && t != c).count() as u64;
            assert_eq!((cc.tp[c], cc.fp[c], cc.fn_[c], cc.tn[c]), (tp, fp, fn_, tn));
        }
    }

    #[test]
    fn length_and_range_errors() {
        assert!(matches!(
            confusion_counts(&[0, 1], &[0], 2),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            confusion_counts(&[0, 2], &[0, 1], 2),
            Err(Error::ClassOutOfRange { .. })
        ));
    }

    #[test]
    fn balanced_binary_accuracy_is_half() {
        // tp=1, tn=1, fp=1, fn=1 for the positive class
        let cc = confusion_counts(&[1, 0, 1, 0], &[1, 1, 0, 0], 2).unwrap();
        assert_eq!(accuracy(&cc).unwrap(), 0.5);
        let (p, r, f1) = precision_recall_f1(&cc, Averaging::Binary);
        assert_eq!((p, r, f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn accuracy_matches_direct_agreement_fraction() {
        let mut rng = Rng::new(6);
        for _ in 0..100 {
            let n = 1 + rng.below(40);
            let pred: Vec<usize> = (0..n).map(|_| rng.below(3)).collect();
            let truth: Vec<usize> = (0..n).map(|_| rng.below(3)).collect();
            let cc = confusion_counts(&pred, &truth, 3).unwrap();
            let direct =
                pred.iter().zip(&truth).filter(|(p, t)| p == t).count() as f64 / n as f64;
            assert!((accuracy(&cc).unwrap() - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn macro_prf_matches_loop_oracle() {
        let mut rng = Rng::new(7);
        let pred: Vec<usize> = (0..100).map(|_| rng.below(3)).collect();
        let truth: Vec<usize> = (0..100).map(|_| rng.below(3)).collect();
        let cc = confusion_counts(&pred, &truth, 3).unwrap();
        let (p, r, f1) = precision_recall_f1(&cc, Averaging::Macro);

        let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
        for c in 0..3 {
            let tp = pred.iter().zip(&truth).filter(|(&a, &b)| a == c && b == c).count() as f64;
            let fp = pred.iter().zip(&truth).filter(|(&a, &b)| a == c && b != c).count() as f64;
            let fn_ = pred.iter().zip(&truth).filter(|(&a, &b)| a != c && b == c).count() as f64;
            let pc = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let rc = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            sp += pc;
            sr += rc;
            sf += if pc + rc > 0.0 { 2.0 * pc * rc / (pc + rc) } else { 0.0 };
        }
        assert!((p - sp / 3.0).abs() < 1e-12);
        assert!((r - sr / 3.0).abs() < 1e-12);
        assert!((f1 - sf / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_denominator_conventions() {
        // nothing predicted positive, nothing actually positive
        let cc = confusion_counts(&[0, 0], &[0, 0], 2).unwrap();
        let (p, r, f1) = precision_recall_f1(&cc, Averaging::Binary);
        assert_eq!((p, r, f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn dice_hand_cases() {
        let ones = Tensor::ones(&[2, 2]);
        assert_eq!(dice_coefficient(&ones, &ones).unwrap(), 1.0);

        let a = Tensor::from_dims(&[4], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let b = Tensor::from_dims(&[4], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(dice_coefficient(&a, &b).unwrap(), 0.0);

        // P covers half of G: |P|=2, |G|=4, intersection 2 -> 2*2/(2+4)
        let p = Tensor::from_dims(&[6], vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let g = Tensor::from_dims(&[6], vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        assert!((dice_coefficient(&p, &g).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn dice_empty_masks_and_errors() {
        let empty = Tensor::zeros(&[3, 3]);
        assert_eq!(dice_coefficient(&empty, &empty).unwrap(), 1.0);

        let bad = Tensor::from_dims(&[2], vec![0.5, 1.0]).unwrap();
        let ok = Tensor::from_dims(&[2], vec![0.0, 1.0]).unwrap();
        assert!(matches!(dice_coefficient(&bad, &ok), Err(Error::NonBinaryInput { .. })));
        assert!(matches!(
            dice_coefficient(&ok, &Tensor::zeros(&[3])),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn dice_is_symmetric() {
        let mut rng = Rng::new(8);
        for _ in 0..50 {
            let a = Tensor::from_dims(&[10], (0..10).map(|_| rng.below(2) as f64).collect()).unwrap();
            let b = Tensor::from_dims(&[10], (0..10).map(|_| rng.below(2) as f64).collect()).unwrap();
            assert_eq!(dice_coefficient(&a, &b).unwrap(), dice_coefficient(&b, &a).unwrap());
        }
    }

    #[test]
    fn metrics_stay_in_unit_interval_and_f1_between_p_and_r() {
        let mut rng = Rng::new(9);
        for _ in 0..200 {
            let n = 1 + rng.below(30);
            let k = 2 + rng.below(4);
            let pred: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
            let truth: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
            let cc = confusion_counts(&pred, &truth, k).unwrap();
            let acc = accuracy(&cc).unwrap();
            assert!((0.0..=1.0).contains(&acc));
            for avg in [Averaging::Binary, Averaging::Macro] {
                let (p, r, f1) = precision_recall_f1(&cc, avg);
                for v in [p, r, f1] {
                    assert!((0.0..=1.0).contains(&v));
                }
            }
            // harmonic-mean bound, checked per class where both are positive
            for c in 0..k {
                let (p, r, f1) = class_prf(&cc, c);
                if p > 0.0 && r > 0.0 {
                    assert!(f1 <= p.max(r) + 1e-15 && f1 >= p.min(r) - 1e-15);
                }
            }
        }
    }

    #[test]
    fn report_formats() {
        let report = MetricReport {
            accuracy: 0.75,
            precision: 0.5,
            recall: 1.0,
            f1: 2.0 / 3.0,
            dice: Some(0.8),
            averaging: Averaging::Binary,
        };
        let block = report.to_kv_block();
        assert!(block.contains("accuracy=0.75\n"));
        assert!(block.contains("dice=0.8\n"));
        assert!(block.contains("averaging=binary\n"));
        assert_eq!(report.to_csv_row().split(',').count(), 5);
    }
}
