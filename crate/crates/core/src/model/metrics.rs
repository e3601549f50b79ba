use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// No predicted and no actual positives; F1 is reported as 0.
    pub undefined: bool,
}

/// F1 of the positive class.
pub fn f1_score(preds: &[bool], labels: &[bool]) -> F1Score {
    assert_eq!(preds.len(), labels.len(), "prediction and label lengths differ");
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let denom = 2 * tp + fp + fn_;
    F1Score {
        f1: if tp == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 },
        precision,
        recall,
        tp,
        fp,
        fn_,
        undefined: denom == 0,
    }
}

pub fn threshold(probs: &[f64]) -> Vec<bool> {
    probs.iter().map(|&p| p > 0.5).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let labels = [true, true, false, false];
        assert_eq!(f1_score(&labels, &labels).f1, 1.0);
        assert_eq!(f1_score(&[false; 4], &labels).f1, 0.0);
        // tp=2, fp=1, fn=2: P=2/3, R=1/2
        let s = f1_score(&[true, true, true, false, false], &[true, true, false, true, true]);
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-15 && (s.recall - 0.5).abs() < 1e-15);
        assert!((s.f1 - 4.0 / 7.0).abs() < 1e-15);
        let u = f1_score(&[false, false], &[false, false]);
        assert!(u.undefined && u.f1 == 0.0);
    }

    #[test]
    fn threshold_is_strict() {
        assert_eq!(threshold(&[0.5, 0.5000001, 0.2]), [false, true, false]);
    }
}
