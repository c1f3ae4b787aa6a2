use std::collections::HashMap;

use super::MlError;
use crate::query::Measure;

/// Computes `measure` of `predicted` against `truth`.
pub fn evaluate_metric(measure: Measure, truth: &[f64], predicted: &[f64]) -> Result<f64, MlError> {
    if truth.len() != predicted.len() {
        return Err(MlError::LengthMismatch {
            left: truth.len(),
            right: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(MlError::InvalidData("metric over zero samples".into()));
    }
    Ok(match measure {
        Measure::Acc => accuracy(truth, predicted),
        Measure::Mse => mean_squared_error(truth, predicted),
        Measure::Fms => fowlkes_mallows(truth, predicted),
    })
}

pub fn accuracy(truth: &[f64], predicted: &[f64]) -> f64 {
    let hits = truth.iter().zip(predicted).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

pub fn mean_squared_error(truth: &[f64], predicted: &[f64]) -> f64 {
    truth.iter().zip(predicted).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / truth.len() as f64
}

fn pairs(count: u64) -> u64 {
    count * count.saturating_sub(1) / 2
}

/// Pair-counting Fowlkes-Mallows index, `TP / sqrt((TP+FP)(TP+FN))`.
///
/// Returns 0 when either partition has no same-cluster pair.
pub fn fowlkes_mallows(truth: &[f64], predicted: &[f64]) -> f64 {
    let mut joint: HashMap<(u64, u64), u64> = HashMap::new();
    let mut by_truth: HashMap<u64, u64> = HashMap::new();
    let mut by_pred: HashMap<u64, u64> = HashMap::new();
    for (t, p) in truth.iter().zip(predicted) {
        *joint.entry((t.to_bits(), p.to_bits())).or_default() += 1;
        *by_truth.entry(t.to_bits()).or_default() += 1;
        *by_pred.entry(p.to_bits()).or_default() += 1;
    }
    let tp: u64 = joint.values().map(|&c| pairs(c)).sum();
    let tp_fn: u64 = by_truth.values().map(|&c| pairs(c)).sum();
    let tp_fp: u64 = by_pred.values().map(|&c| pairs(c)).sum();
    if tp_fp == 0 || tp_fn == 0 {
        return 0.0;
    }
    tp as f64 / ((tp_fp as f64) * (tp_fn as f64)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent O(n^2) pair enumeration.
    fn fms_brute(truth: &[f64], pred: &[f64]) -> f64 {
        let (mut tp, mut fp, mut fneg) = (0.0f64, 0.0f64, 0.0f64);
        for i in 0..truth.len() {
            for j in i + 1..truth.len() {
                let same_t = truth[i] == truth[j];
                let same_p = pred[i] == pred[j];
                match (same_t, same_p) {
                    (true, true) => tp += 1.0,
                    (false, true) => fp += 1.0,
                    (true, false) => fneg += 1.0,
                    _ => {}
                }
            }
        }
        if tp + fp == 0.0 || tp + fneg == 0.0 {
            0.0
        } else {
            tp / ((tp + fp) * (tp + fneg)).sqrt()
        }
    }

    #[test]
    fn accuracy_example() {
        let acc = evaluate_metric(Measure::Acc, &[0.0, 1.0, 1.0], &[0.0, 1.0, 0.0]).unwrap();
        assert!((acc - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn fms_hand_example() {
        let v = evaluate_metric(Measure::Fms, &[0.0, 0.0, 1.0, 1.0], &[0.0; 4]).unwrap();
        assert!((v - 2.0 / 12f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn fms_identical_and_degenerate() {
        let t = [0.0, 0.0, 1.0, 2.0, 2.0];
        assert_eq!(fowlkes_mallows(&t, &t), 1.0);
        assert_eq!(fowlkes_mallows(&[0.0, 1.0, 2.0], &[0.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn fms_matches_brute_force() {
        let truth = [0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 2.0, 0.0, 1.0];
        let pred = [5.0, 5.0, 5.0, 1.0, 1.0, 2.0, 2.0, 7.0, 1.0];
        assert!((fowlkes_mallows(&truth, &pred) - fms_brute(&truth, &pred)).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch() {
        assert!(evaluate_metric(Measure::Mse, &[1.0], &[1.0, 2.0]).is_err());
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn fms_relabel_invariant(labels in proptest::collection::vec((0u8..4, 0u8..4), 2..40), shift in 1u8..50) {
            let truth: Vec<f64> = labels.iter().map(|l| l.0 as f64).collect();
            let pred: Vec<f64> = labels.iter().map(|l| l.1 as f64).collect();
            let relabeled: Vec<f64> = labels.iter().map(|l| (3 - l.1) as f64 * 10.0 + shift as f64).collect();
            let a = fowlkes_mallows(&truth, &pred);
            prop_assert_eq!(a, fowlkes_mallows(&truth, &relabeled));
            prop_assert_eq!(a, fowlkes_mallows(&pred, &truth));
            prop_assert!((a - fms_brute(&truth, &pred)).abs() < 1e-12);
        }
    }
}
