//! Heterogeneity and classification metrics.

use thiserror::Error;

use crate::tasks::TaskLevel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("parameter vectors have different shapes")]
    ShapeMismatch,
    #[error("embedding dims differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("predictions and labels differ in length or are empty")]
    LengthMismatch,
}

/// `(1 − e^{−x}) / (1 + e^{−x})`, i.e. `tanh(x/2)`.
fn squash(x: f64) -> f64 {
    (x / 2.0).tanh()
}

/// Task heterogeneity: 1 across task levels, otherwise a squashed mean
/// absolute parameter deviation.
pub fn task_heterogeneity(
    theta_a: &[f64],
    theta_b: &[f64],
    task_a: TaskLevel,
    task_b: TaskLevel,
) -> Result<f64, MetricError> {
    if task_a != task_b {
        return Ok(1.0);
    }
    if theta_a.len() != theta_b.len() {
        return Err(MetricError::ShapeMismatch);
    }
    if theta_a.is_empty() {
        return Ok(0.0);
    }
    let x = theta_a
        .iter()
        .zip(theta_b)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / theta_a.len() as f64;
    Ok(squash(x))
}

/// Data heterogeneity between pooled graph representations, in `[0, 1)`.
pub fn data_heterogeneity(h_a: &[f64], h_b: &[f64]) -> Result<f64, MetricError> {
    if h_a.len() != h_b.len() {
        return Err(MetricError::DimMismatch(h_a.len(), h_b.len()));
    }
    if h_a.is_empty() {
        return Ok(0.0);
    }
    let m = h_a
        .iter()
        .zip(h_b)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / h_a.len() as f64;
    Ok(squash(m))
}

/// Accuracy and macro-F1; classes absent from both predictions and labels are skipped.
pub fn accuracy_f1(
    preds: &[usize],
    labels: &[usize],
    n_classes: usize,
) -> Result<(f64, f64), MetricError> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(MetricError::LengthMismatch);
    }
    let mut tp = vec![0usize; n_classes];
    let mut pred_count = vec![0usize; n_classes];
    let mut label_count = vec![0usize; n_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        pred_count[p] += 1;
        label_count[l] += 1;
        if p == l {
            tp[p] += 1;
        }
    }
    let correct: usize = tp.iter().sum();
    let acc = correct as f64 / preds.len() as f64;
    let mut f1_sum = 0.0;
    let mut present = 0;
    for c in 0..n_classes {
        if pred_count[c] == 0 && label_count[c] == 0 {
            continue;
        }
        present += 1;
        let denom = pred_count[c] + label_count[c];
        f1_sum += 2.0 * tp[c] as f64 / denom as f64;
    }
    Ok((acc, f1_sum / present as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn task_heterogeneity_cases() {
        assert_eq!(
            task_heterogeneity(&[0.0], &[5.0], TaskLevel::Node, TaskLevel::Edge).unwrap(),
            1.0
        );
        assert_eq!(
            task_heterogeneity(&[1.0, 2.0], &[1.0, 2.0], TaskLevel::Node, TaskLevel::Node).unwrap(),
            0.0
        );
        let l3 = 3f64.ln();
        let v = task_heterogeneity(&[l3, 0.0], &[0.0, -l3], TaskLevel::Graph, TaskLevel::Graph)
            .unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        assert!(task_heterogeneity(&[1.0], &[1.0, 2.0], TaskLevel::Node, TaskLevel::Node).is_err());
    }

    #[test]
    fn data_heterogeneity_cases() {
        assert_eq!(data_heterogeneity(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        // m = 2 ln 3
        let d = (2.0 * 3f64.ln()).sqrt();
        assert!((data_heterogeneity(&[d], &[0.0]).unwrap() - 0.8).abs() < 1e-15);
        let big = data_heterogeneity(&[30.0], &[0.0]).unwrap();
        assert!(big <= 1.0 && big > 0.999_999);
        assert!(data_heterogeneity(&[1e3], &[0.0]).unwrap() <= 1.0);
        assert!(data_heterogeneity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn accuracy_f1_cases() {
        assert_eq!(accuracy_f1(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), (1.0, 1.0));
        let (acc, f1) = accuracy_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(acc, 0.5);
        assert!((f1 - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            accuracy_f1(&[], &[], 2).unwrap_err(),
            MetricError::LengthMismatch
        );
        assert_eq!(
            accuracy_f1(&[0], &[0, 1], 2).unwrap_err(),
            MetricError::LengthMismatch
        );
        // class 2 absent from both sides is skipped
        assert_eq!(accuracy_f1(&[0, 1], &[0, 1], 3).unwrap(), (1.0, 1.0));
    }

    proptest! {
        #[test]
        fn heterogeneity_symmetric_and_bounded(
            a in prop::collection::vec(-5.0f64..5.0, 1..20),
            shift in prop::collection::vec(-5.0f64..5.0, 20),
        ) {
            let b: Vec<f64> = a.iter().zip(&shift).map(|(x, s)| x + s).collect();
            let t1 = task_heterogeneity(&a, &b, TaskLevel::Node, TaskLevel::Node).unwrap();
            let t2 = task_heterogeneity(&b, &a, TaskLevel::Node, TaskLevel::Node).unwrap();
            prop_assert_eq!(t1, t2);
            prop_assert!((0.0..=1.0).contains(&t1));
            let d1 = data_heterogeneity(&a, &b).unwrap();
            let d2 = data_heterogeneity(&b, &a).unwrap();
            prop_assert_eq!(d1, d2);
            prop_assert!((0.0..=1.0).contains(&d1));
            prop_assert_eq!(
                task_heterogeneity(&a, &b, TaskLevel::Node, TaskLevel::Graph).unwrap(),
                1.0
            );
        }

        #[test]
        fn heterogeneity_monotone(x in 0.0f64..10.0, dx in 0.01f64..1.0) {
            let lo = task_heterogeneity(&[x], &[0.0], TaskLevel::Edge, TaskLevel::Edge).unwrap();
            let hi = task_heterogeneity(&[x + dx], &[0.0], TaskLevel::Edge, TaskLevel::Edge).unwrap();
            prop_assert!(hi > lo);
            let lo = data_heterogeneity(&[x.sqrt()], &[0.0]).unwrap();
            let hi = data_heterogeneity(&[(x + dx).sqrt()], &[0.0]).unwrap();
            prop_assert!(hi > lo);
        }

        #[test]
        fn macro_f1_bounded_and_diagonal(labels in prop::collection::vec(0usize..4, 1..50)) {
            let (acc, f1) = accuracy_f1(&labels, &labels, 4).unwrap();
            prop_assert_eq!(acc, 1.0);
            prop_assert_eq!(f1, acc);
            let preds: Vec<usize> = labels.iter().map(|l| (l + 1) % 4).collect();
            let (_, f1) = accuracy_f1(&preds, &labels, 4).unwrap();
            prop_assert!((0.0..=1.0).contains(&f1));
        }
    }
}
