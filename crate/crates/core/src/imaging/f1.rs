use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which recall denominator to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecallMode {
    /// `TP / (TP + FN)`.
    #[default]
    Standard,
    /// `TP / (TP + TN)`, the variant with true negatives in the denominator.
    /// Kept for audits only.
    TrueNegativeDenominator,
}

/// Confusion counts and the derived scores. A score whose denominator is
/// zero is reported as 0 with its flag set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn f1_score(pred: &[u8], truth: &[u8]) -> Result<F1Report> {
    f1_score_with(pred, truth, RecallMode::Standard)
}

pub fn f1_score_with(pred: &[u8], truth: &[u8], mode: RecallMode) -> Result<F1Report> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    let mut c = [0u64; 4];
    for (&p, &t) in pred.iter().zip(truth) {
        if p > 1 || t > 1 {
            return Err(Error::InvalidArgument("mask entries must be 0 or 1".into()));
        }
        c[usize::from(p) * 2 + usize::from(t)] += 1;
    }
    let [tn, fn_, fp, tp] = c;
    let (precision, precision_undefined) = ratio(tp, tp + fp);
    let recall_den = match mode {
        RecallMode::Standard => tp + fn_,
        RecallMode::TrueNegativeDenominator => tp + tn,
    };
    let (recall, recall_undefined) = ratio(tp, recall_den);
    let sum = precision + recall;
    let (f1, f1_undefined) = if sum == 0.0 {
        (0.0, true)
    } else {
        (2.0 * precision * recall / sum, false)
    };
    Ok(F1Report {
        tp,
        fp,
        fn_,
        tn,
        precision,
        recall,
        f1,
        precision_undefined,
        recall_undefined,
        f1_undefined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_and_empty() {
        let t = [0, 1, 1, 0, 1];
        assert_eq!(f1_score(&t, &t).unwrap().f1, 1.0);
        let r = f1_score(&[0; 5], &t).unwrap();
        assert_eq!(r.f1, 0.0);
        assert!(r.precision_undefined && r.f1_undefined && !r.recall_undefined);
    }

    #[test]
    fn hand_counts() {
        // TP=2, FP=1, FN=1, TN=1
        let pred = [1, 1, 1, 0, 0];
        let truth = [1, 1, 0, 1, 0];
        let r = f1_score(&pred, &truth).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_, r.tn), (2, 1, 1, 1));
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-15);
        let s = f1_score_with(&pred, &truth, RecallMode::TrueNegativeDenominator).unwrap();
        assert!((s.recall - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn brute_force_counter() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.gen_range(1..300);
            let pred: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            let truth: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
            for i in 0..n {
                match (pred[i], truth[i]) {
                    (1, 1) => tp += 1,
                    (1, 0) => fp += 1,
                    (0, 1) => fn_ += 1,
                    _ => {}
                }
            }
            let r = f1_score(&pred, &truth).unwrap();
            assert_eq!((r.tp, r.fp, r.fn_), (tp, fp, fn_));
            let p = tp as f64 / (tp + fp) as f64;
            let rc = tp as f64 / (tp + fn_) as f64;
            if tp > 0 {
                assert_eq!(r.f1, 2.0 * p * rc / (p + rc));
            }
        }
    }

    #[test]
    fn shape_and_value_errors() {
        assert!(f1_score(&[0, 1], &[0]).is_err());
        assert!(f1_score(&[2], &[0]).is_err());
    }
}
