//! Cluster-aware random over/under-sampling of training records.
//!
//! The top cluster (index 0, highest incident frequency) is rebalanced to a
//! 0.5 positive fraction; every other cluster keeps its original rate ratio
//! to the top cluster, so relative frequencies across clusters survive the
//! rebalancing.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::CellRecord;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleMode {
    /// Identity: keep the training set as-is.
    None,
    /// Random under-sampling of negatives.
    Rus,
    /// Random over-sampling of positives.
    Ros,
}

impl ResampleMode {
    pub fn label(&self) -> &'static str {
        match self {
            ResampleMode::None => "NoR",
            ResampleMode::Rus => "RUS",
            ResampleMode::Ros => "ROS",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ResampleError {
    #[error("cluster {cluster} has no positive records; cannot resample")]
    NoPositives { cluster: usize },
    #[error("cluster {cluster} has no negative records; cannot resample")]
    NoNegatives { cluster: usize },
    #[error("target positive fraction must be in (0, 1), got {0}")]
    BadTarget(f64),
}

/// Per-cluster resampling targets plus mode and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ResamplePlan<T = crate::Scalar> {
    pub mode: ResampleMode,
    /// Target positive fraction per cluster index; targets[0] = 0.5.
    pub targets: Vec<T>,
    pub seed: u64,
}

impl<T: Real> ResamplePlan<T> {
    /// Build the plan from the clusters' original positive fractions, with
    /// cluster 0 the highest-frequency cluster: f'_0 = 0.5 and
    /// f'_c = 0.5 * f_c / f_0.
    pub fn from_fractions(mode: ResampleMode, fractions: &[T], seed: u64) -> Self {
        let half = T::of(0.5);
        let f0 = fractions.first().copied().unwrap_or(T::zero());
        let targets = fractions
            .iter()
            .map(|&f| {
                if f0 > T::zero() {
                    (half * f / f0).min(half)
                } else {
                    T::zero()
                }
            })
            .collect();
        ResamplePlan { mode, targets, seed }
    }
}

/// Resample one cluster's record indices to the target positive fraction.
///
/// RUS keeps every positive and uniformly subsamples negatives without
/// replacement down to round(P * (1 - f') / f'). ROS keeps every negative and
/// every original positive, then draws extra positives with replacement until
/// positives reach round(N * f' / (1 - f')). Indices come back in ascending
/// order with duplicates appended at the end, deterministically for a seed.
pub fn resample_indices(
    labels: &[u8],
    target: f64,
    mode: ResampleMode,
    cluster: usize,
    seed: u64,
) -> Result<Vec<usize>, ResampleError> {
    if mode == ResampleMode::None {
        return Ok((0..labels.len()).collect());
    }
    if !(target > 0.0 && target < 1.0) {
        return Err(ResampleError::BadTarget(target));
    }
    let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 0).collect();
    let negatives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    if positives.is_empty() {
        return Err(ResampleError::NoPositives { cluster });
    }
    if negatives.is_empty() {
        return Err(ResampleError::NoNegatives { cluster });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        ResampleMode::Rus => {
            let want = (positives.len() as f64 * (1.0 - target) / target).round() as usize;
            let keep_n = want.min(negatives.len());
            let mut chosen: Vec<usize> = sample(&mut rng, negatives.len(), keep_n)
                .into_iter()
                .map(|i| negatives[i])
                .collect();
            let mut kept = positives;
            kept.append(&mut chosen);
            kept.sort_unstable();
            Ok(kept)
        }
        ResampleMode::Ros => {
            let want = (negatives.len() as f64 * target / (1.0 - target)).round() as usize;
            let extra = want.saturating_sub(positives.len());
            let mut kept: Vec<usize> = (0..labels.len()).collect();
            for _ in 0..extra {
                kept.push(positives[rng.random_range(0..positives.len())]);
            }
            Ok(kept)
        }
        ResampleMode::None => unreachable!(),
    }
}

/// Record-level wrapper over [`resample_indices`].
pub fn resample_records(
    records: &[CellRecord],
    target: f64,
    mode: ResampleMode,
    cluster: usize,
    seed: u64,
) -> Result<Vec<CellRecord>, ResampleError> {
    let labels: Vec<u8> = records.iter().map(|r| r.label()).collect();
    let idx = resample_indices(&labels, target, mode, cluster, seed)?;
    Ok(idx.into_iter().map(|i| records[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(pos: usize, neg: usize) -> Vec<u8> {
        let mut v = vec![1u8; pos];
        v.extend(std::iter::repeat_n(0u8, neg));
        v
    }

    fn pos_fraction(labels: &[u8], idx: &[usize]) -> f64 {
        let p = idx.iter().filter(|&&i| labels[i] != 0).count();
        p as f64 / idx.len() as f64
    }

    #[test]
    fn rus_balances_top_cluster() {
        let l = labels(100, 900);
        let idx = resample_indices(&l, 0.5, ResampleMode::Rus, 0, 7).unwrap();
        assert_eq!(idx.len(), 200);
        assert_eq!(pos_fraction(&l, &idx), 0.5);
    }

    #[test]
    fn rus_ratio_rule_cluster_b() {
        // f_A = 0.1, f_B = 0.01 -> f'_B = 0.05 -> keep 10 pos / 190 neg.
        let l = labels(10, 990);
        let idx = resample_indices(&l, 0.05, ResampleMode::Rus, 1, 7).unwrap();
        assert_eq!(idx.len(), 200);
        assert_eq!(idx.iter().filter(|&&i| l[i] != 0).count(), 10);
    }

    #[test]
    fn ros_superset_of_positives() {
        let l = labels(10, 990);
        let idx = resample_indices(&l, 0.05, ResampleMode::Ros, 0, 7).unwrap();
        // round(990 * 0.05 / 0.95) = 52 positives.
        assert_eq!(idx.iter().filter(|&&i| l[i] != 0).count(), 52);
        assert_eq!(idx.iter().filter(|&&i| l[i] == 0).count(), 990);
        for orig in 0..10 {
            assert!(idx.contains(&orig));
        }
    }

    #[test]
    fn none_is_identity() {
        let l = labels(3, 5);
        let idx = resample_indices(&l, 0.5, ResampleMode::None, 0, 7).unwrap();
        assert_eq!(idx, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn empty_positives_error_names_cluster() {
        let l = labels(0, 10);
        let e = resample_indices(&l, 0.5, ResampleMode::Rus, 3, 7).unwrap_err();
        assert_eq!(e, ResampleError::NoPositives { cluster: 3 });
    }

    #[test]
    fn deterministic_given_seed() {
        let l = labels(40, 700);
        let a = resample_indices(&l, 0.3, ResampleMode::Rus, 0, 11).unwrap();
        let b = resample_indices(&l, 0.3, ResampleMode::Rus, 0, 11).unwrap();
        assert_eq!(a, b);
        let c = resample_indices(&l, 0.3, ResampleMode::Ros, 0, 11).unwrap();
        let d = resample_indices(&l, 0.3, ResampleMode::Ros, 0, 11).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn plan_targets_preserve_ratio() {
        let plan: ResamplePlan<f64> =
            ResamplePlan::from_fractions(ResampleMode::Rus, &[0.1, 0.01], 0);
        assert_eq!(plan.targets[0], 0.5);
        assert!((plan.targets[1] - 0.05).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn post_fraction_hits_target_within_rounding(
            pos in 1usize..60,
            neg in 1usize..400,
            t10 in 1u32..10,
            seed in 0u64..1000,
            ros in proptest::bool::ANY,
        ) {
            let target = t10 as f64 / 20.0; // 0.05 .. 0.45
            let l = labels(pos, neg);
            // Both modes can only move the fraction toward the target in one
            // direction, which is the only direction the plan ever asks for:
            // RUS removes negatives (target above original fraction would
            // need more), ROS adds positives (target below would need fewer).
            let original = pos as f64 / (pos + neg) as f64;
            let want_neg = (pos as f64 * (1.0 - target) / target).round() as usize;
            prop_assume!(if ros { target >= original } else { want_neg <= neg });
            let mode = if ros { ResampleMode::Ros } else { ResampleMode::Rus };
            let idx = resample_indices(&l, target, mode, 0, seed).unwrap();
            let achieved = pos_fraction(&l, &idx);
            prop_assert!((achieved - target).abs() <= 1.0 / idx.len() as f64 + 1e-12);
        }

        #[test]
        fn rus_is_subset_ros_keeps_all_originals(
            pos in 1usize..40,
            neg in 1usize..200,
            seed in 0u64..1000,
        ) {
            let l = labels(pos, neg);
            let rus = resample_indices(&l, 0.4, ResampleMode::Rus, 0, seed).unwrap();
            let mut sorted = rus.clone();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), rus.len()); // no duplicates
            prop_assert!(rus.iter().all(|&i| i < l.len()));

            let ros = resample_indices(&l, 0.4, ResampleMode::Ros, 0, seed).unwrap();
            for i in 0..l.len() {
                prop_assert!(ros.contains(&i)); // every original present
            }
        }
    }
}
