//! Ranking and threshold metrics for binary outcomes.

use serde::Serialize;

use crate::error::{Error, Result};

/// Area under the ROC curve via the rank formulation; tied scores count
/// one half. `None` when either class is absent.
pub fn auroc(labels: &[bool], scores: &[f64]) -> Option<f64> {
    assert_eq!(labels.len(), scores.len(), "labels and scores differ in length");
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of mid-ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: the area under the precision-recall step curve,
/// with tied scores entering as one threshold.
pub fn auprc(labels: &[bool], scores: &[f64]) -> Option<f64> {
    assert_eq!(labels.len(), scores.len(), "labels and scores differ in length");
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            if labels[k] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    Some(ap)
}

/// Fraction of cases where `score >= threshold` agrees with the label.
pub fn accuracy(labels: &[bool], scores: &[f64], threshold: f64) -> f64 {
    assert_eq!(labels.len(), scores.len(), "labels and scores differ in length");
    if labels.is_empty() {
        return 0.0;
    }
    let hits = labels
        .iter()
        .zip(scores)
        .filter(|(&l, &s)| (s >= threshold) == l)
        .count();
    hits as f64 / labels.len() as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub accuracy: f64,
}

pub fn compute_metrics(labels: &[bool], scores: &[f64], threshold: f64) -> Metrics {
    Metrics {
        auroc: auroc(labels, scores),
        auprc: auprc(labels, scores),
        accuracy: accuracy(labels, scores, threshold),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Sensitivity(f64),
    Specificity(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingPoint {
    /// Cases with `score >= threshold` are called positive.
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

fn sens_spec(labels: &[bool], scores: &[f64], thr: f64) -> (f64, f64) {
    let (mut tp, mut tn, mut p, mut n) = (0usize, 0usize, 0usize, 0usize);
    for (&l, &s) in labels.iter().zip(scores) {
        if l {
            p += 1;
            tp += usize::from(s >= thr);
        } else {
            n += 1;
            tn += usize::from(s < thr);
        }
    }
    (tp as f64 / p as f64, tn as f64 / n as f64)
}

/// Finds the threshold that meets the target while giving the best
/// complementary metric: for a sensitivity target the highest qualifying
/// threshold, for a specificity target the lowest.
pub fn operating_point(labels: &[bool], scores: &[f64], target: Target) -> Result<OperatingPoint> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::Validation("operating point needs both classes".into()));
    }
    let v = match target {
        Target::Sensitivity(v) | Target::Specificity(v) => v,
    };
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Validation(format!("target {v} is unreachable")));
    }
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);
    let point = |thr: f64| {
        let (sensitivity, specificity) = sens_spec(labels, scores, thr);
        OperatingPoint {
            threshold: thr,
            sensitivity,
            specificity,
        }
    };
    let found = match target {
        Target::Sensitivity(v) => thresholds.iter().rev().map(|&t| point(t)).find(|p| p.sensitivity >= v),
        Target::Specificity(v) => thresholds.iter().map(|&t| point(t)).find(|p| p.specificity >= v),
    };
    found.ok_or_else(|| Error::Validation(format!("target {v} is unreachable")))
}

/// Mean and population standard deviation; `(NaN, NaN)` when empty.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_scores() {
        let l = [true, true, false, false];
        let s = [0.9, 0.8, 0.2, 0.1];
        assert_eq!(auroc(&l, &s), Some(1.0));
        assert_eq!(auprc(&l, &s), Some(1.0));
        assert_eq!(accuracy(&l, &s, 0.5), 1.0);
    }

    #[test]
    fn three_of_four_pairs() {
        let l = [true, false, true, false];
        let s = [0.9, 0.8, 0.4, 0.1];
        assert_eq!(auroc(&l, &s), Some(0.75));
    }

    #[test]
    fn ties_count_half() {
        let l = [true, false, true, false, false];
        assert_eq!(auroc(&l, &[0.3; 5]), Some(0.5));
    }

    #[test]
    fn single_class_is_absent() {
        assert_eq!(auroc(&[true, true], &[0.1, 0.2]), None);
        assert_eq!(auprc(&[false], &[0.1]), None);
    }

    #[test]
    fn average_precision_hand_case() {
        // Ranked: +, -, +  → AP = 0.5·1 + 0.5·(2/3).
        let ap = auprc(&[true, false, true], &[0.9, 0.5, 0.1]).unwrap();
        assert!((ap - (0.5 + 1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn operating_point_on_separated_scores() {
        let l = [true, true, false, false];
        let s = [0.9, 0.8, 0.2, 0.1];
        let p = operating_point(&l, &s, Target::Sensitivity(0.8)).unwrap();
        assert_eq!((p.sensitivity, p.specificity), (1.0, 1.0));
        let p = operating_point(&l, &s, Target::Specificity(0.8)).unwrap();
        assert_eq!((p.sensitivity, p.specificity), (1.0, 1.0));
        assert!(operating_point(&l, &s, Target::Sensitivity(1.2)).is_err());
        assert!(operating_point(&[true], &[0.3], Target::Sensitivity(0.5)).is_err());
    }
}
