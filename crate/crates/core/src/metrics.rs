//! Classification metrics and rank correlations of spatial marginals.
//!
//! The positive class is always the incident class (label 1). Precision,
//! recall, and F1 are defined as 0 when their denominator is 0, which is the
//! convention the all-negative-prediction pathology relies on: accuracy then
//! equals the data sparsity while F1 collapses to 0.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::domain::{CellRecord, SegmentId};
use crate::scalar::Real;
use crate::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("input length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    Empty,
    #[error("input too short: need at least {need} values, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("correlation undefined for constant input")]
    ConstantInput,
    #[error("spatial marginals need records from at least 2 segments, got {0}")]
    TooFewSegments(usize),
}

/// Confusion-matrix counts plus the four derived rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfusionMetrics<T> {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub accuracy: T,
    pub precision: T,
    pub recall: T,
    pub f1: T,
}

/// Standard accuracy/precision/recall/F1 over equal-length binary sequences.
pub fn confusion_metrics<T: Real>(
    labels: &[u8],
    predictions: &[u8],
) -> Result<ConfusionMetrics<T>, MetricsError> {
    if labels.len() != predictions.len() {
        return Err(MetricsError::LengthMismatch {
            left: labels.len(),
            right: predictions.len(),
        });
    }
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&y, &p) in labels.iter().zip(predictions) {
        match (y != 0, p != 0) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            T::zero()
        } else {
            T::of_usize(num) / T::of_usize(den)
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > T::zero() {
        T::of(2.0) * precision * recall / (precision + recall)
    } else {
        T::zero()
    };
    Ok(ConfusionMetrics {
        tp,
        fp,
        fn_,
        tn,
        accuracy: ratio(tp + tn, labels.len()),
        precision,
        recall,
        f1,
    })
}

/// Product-moment correlation coefficient.
pub fn pearson<T: Real>(x: &[T], y: &[T]) -> Result<T, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(MetricsError::TooShort {
            need: 2,
            got: x.len(),
        });
    }
    let n = T::of_usize(x.len());
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Err(MetricsError::ConstantInput);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Rank correlation: Pearson on average-ranked data (ties get average ranks).
pub fn spearman<T: Real>(x: &[T], y: &[T]) -> Result<T, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    pearson(&rx, &ry)
}

/// 1-based ranks with ties averaged.
pub fn average_ranks<T: Real>(values: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![T::zero(); values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Average of the 1-based ranks i+1 ..= j+1.
        let avg = T::of_usize(i + 1 + j + 1) / T::of(2.0);
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Per-segment mean of observed labels and of predicted probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMarginal {
    pub segment_id: SegmentId,
    pub observed_rate: Scalar,
    pub predicted_mean: Scalar,
}

/// Spatial marginals over an evaluation period, sorted by segment id.
pub fn spatial_marginals(
    records: &[CellRecord],
    probabilities: &[Scalar],
) -> Result<Vec<SegmentMarginal>, MetricsError> {
    if records.len() != probabilities.len() {
        return Err(MetricsError::LengthMismatch {
            left: records.len(),
            right: probabilities.len(),
        });
    }
    let mut acc: BTreeMap<&SegmentId, (f64, f64, usize)> = BTreeMap::new();
    for (rec, &p) in records.iter().zip(probabilities) {
        let e = acc.entry(&rec.segment_id).or_insert((0.0, 0.0, 0));
        e.0 += rec.label() as f64;
        e.1 += p;
        e.2 += 1;
    }
    if acc.len() < 2 {
        return Err(MetricsError::TooFewSegments(acc.len()));
    }
    Ok(acc
        .into_iter()
        .map(|(id, (lab, pred, n))| SegmentMarginal {
            segment_id: id.clone(),
            observed_rate: lab / n as f64,
            predicted_mean: pred / n as f64,
        })
        .collect())
}
