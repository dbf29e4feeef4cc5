//! Segment clustering by incident frequency: 1-D k-means over per-segment
//! positive-cell rates, with k-means++ seeding and seeded restarts.
//!
//! Cluster 0 is always the highest-frequency cluster (centroids are sorted
//! descending after the fit), so downstream resampling can treat index 0 as
//! the top cluster.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::domain::SegmentId;
use crate::scalar::Real;
use crate::util::mix_seed;

const RESTARTS: usize = 10;
const MAX_ITERS: usize = 300;
const MOVE_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("need at least {k} distinct rate values, got {distinct}")]
    TooFewDistinct { k: usize, distinct: usize },
}

/// A fitted 1-D k-means model over per-segment rates.
#[derive(Debug, Clone)]
pub struct ClusterModel<T = crate::Scalar> {
    pub k: usize,
    /// Sorted descending: cluster 0 has the highest rate.
    pub centroids: Vec<T>,
    pub assignment: BTreeMap<SegmentId, usize>,
    /// Within-cluster sum of squared errors of the winning restart.
    pub sse: T,
}

impl<T: Real> ClusterModel<T> {
    /// Cluster of a known segment.
    pub fn cluster_of(&self, id: &SegmentId) -> Option<usize> {
        self.assignment.get(id).copied()
    }

    /// Nearest centroid for an arbitrary rate; ties go to the lower index.
    pub fn assign(&self, rate: T) -> usize {
        nearest_centroid(&self.centroids, rate)
    }
}

fn nearest_centroid<T: Real>(centroids: &[T], value: T) -> usize {
    let mut best = 0;
    let mut best_d = (value - centroids[0]).abs();
    for (i, &c) in centroids.iter().enumerate().skip(1) {
        let d = (value - c).abs();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Lloyd's algorithm on 1-D rates: k-means++ seeding, best of 10 seeded
/// restarts by SSE (ties by restart index), at most 300 iterations or until
/// centroid movement falls below 1e-10.
pub fn fit_kmeans<T: Real>(
    rates: &BTreeMap<SegmentId, T>,
    k: usize,
    seed: u64,
) -> Result<ClusterModel<T>, ClusterError> {
    if k == 0 {
        return Err(ClusterError::ZeroK);
    }
    let ids: Vec<&SegmentId> = rates.keys().collect();
    let values: Vec<T> = rates.values().copied().collect();
    let mut distinct = values.clone();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite rates"));
    distinct.dedup();
    if distinct.len() < k {
        return Err(ClusterError::TooFewDistinct {
            k,
            distinct: distinct.len(),
        });
    }

    let mut best: Option<(T, Vec<T>, Vec<usize>)> = None;
    for restart in 0..RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, restart as u64));
        let mut centroids = seed_plus_plus(&values, k, &mut rng);
        let mut assign = vec![0usize; values.len()];
        for _ in 0..MAX_ITERS {
            for (i, &v) in values.iter().enumerate() {
                assign[i] = nearest_centroid(&centroids, v);
            }
            let mut sums = vec![T::zero(); k];
            let mut counts = vec![0usize; k];
            for (i, &v) in values.iter().enumerate() {
                sums[assign[i]] = sums[assign[i]] + v;
                counts[assign[i]] += 1;
            }
            let mut movement = T::zero();
            for c in 0..k {
                let new = if counts[c] > 0 {
                    sums[c] / T::of_usize(counts[c])
                } else {
                    // Reseed an emptied cluster at the point farthest from
                    // its current centroid.
                    farthest_point(&values, &centroids, &assign)
                };
                movement = movement.max((new - centroids[c]).abs());
                centroids[c] = new;
            }
            if movement < T::of(MOVE_TOL) {
                break;
            }
        }
        for (i, &v) in values.iter().enumerate() {
            assign[i] = nearest_centroid(&centroids, v);
        }
        let sse: T = values
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - centroids[assign[i]]).powi(2))
            .sum();
        let better = match &best {
            None => true,
            Some((best_sse, _, _)) => sse < *best_sse,
        };
        if better {
            best = Some((sse, centroids, assign));
        }
    }

    let (sse, centroids, assign) = best.expect("at least one restart");

    // Relabel so cluster 0 is the highest-rate cluster.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| centroids[b].partial_cmp(&centroids[a]).expect("finite"));
    let mut remap = vec![0usize; k];
    for (new_idx, &old_idx) in order.iter().enumerate() {
        remap[old_idx] = new_idx;
    }
    let sorted_centroids: Vec<T> = order.iter().map(|&i| centroids[i]).collect();
    let assignment: BTreeMap<SegmentId, usize> = ids
        .iter()
        .zip(&assign)
        .map(|(id, &c)| ((*id).clone(), remap[c]))
        .collect();

    Ok(ClusterModel {
        k,
        centroids: sorted_centroids,
        assignment,
        sse,
    })
}

/// k-means++ seeding: first centroid uniform, the rest D^2-weighted.
fn seed_plus_plus<T: Real>(values: &[T], k: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(values[rng.random_range(0..values.len())]);
    while centroids.len() < k {
        let d2: Vec<T> = values
            .iter()
            .map(|&v| {
                centroids
                    .iter()
                    .map(|&c| (v - c).powi(2))
                    .fold(T::infinity(), T::min)
            })
            .collect();
        let total: T = d2.iter().copied().sum();
        if total <= T::zero() {
            // All remaining mass sits on existing centroids; pick any
            // value not yet chosen to keep centroids distinct.
            let next = values
                .iter()
                .copied()
                .find(|v| !centroids.contains(v))
                .unwrap_or(values[0]);
            centroids.push(next);
            continue;
        }
        let u = T::of(rng.random::<f64>()) * total;
        let mut acc = T::zero();
        let mut chosen = values.len() - 1;
        for (i, &w) in d2.iter().enumerate() {
            acc = acc + w;
            if u < acc {
                chosen = i;
                break;
            }
        }
        centroids.push(values[chosen]);
    }
    centroids
}

fn farthest_point<T: Real>(values: &[T], centroids: &[T], assign: &[usize]) -> T {
    let mut best = values[0];
    let mut best_d = T::neg_infinity();
    for (i, &v) in values.iter().enumerate() {
        let d = (v - centroids[assign[i]]).abs();
        if d > best_d {
            best_d = d;
            best = v;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rates(pairs: &[(&str, f64)]) -> BTreeMap<SegmentId, f64> {
        pairs.iter().map(|(s, r)| ((*s).into(), *r)).collect()
    }

    /// Exhaustive oracle: best SSE over every assignment of n points to k
    /// clusters (cluster means recomputed per assignment).
    fn exhaustive_best_sse(values: &[f64], k: usize) -> (f64, Vec<usize>) {
        let n = values.len();
        assert!(k == 2 && n <= 16, "oracle sized for tiny inputs");
        let mut best = (f64::INFINITY, vec![0; n]);
        for mask in 0..(1u32 << n) {
            let assign: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
            let mut sums = [0.0; 2];
            let mut counts = [0usize; 2];
            for (i, &v) in values.iter().enumerate() {
                sums[assign[i]] += v;
                counts[assign[i]] += 1;
            }
            if counts.contains(&0) {
                continue;
            }
            let means = [sums[0] / counts[0] as f64, sums[1] / counts[1] as f64];
            let sse: f64 = values
                .iter()
                .enumerate()
                .map(|(i, &v)| (v - means[assign[i]]).powi(2))
                .sum();
            if sse < best.0 {
                best = (sse, assign);
            }
        }
        best
    }

    #[test]
    fn recovers_exhaustive_two_partition() {
        let r = rates(&[
            ("a", 0.01),
            ("b", 0.02),
            ("c", 0.015),
            ("d", 0.20),
            ("e", 0.22),
        ]);
        let model = fit_kmeans(&r, 2, 42).unwrap();
        let (oracle_sse, _) = exhaustive_best_sse(&[0.01, 0.02, 0.015, 0.20, 0.22], 2);
        assert_relative_eq!(model.sse, oracle_sse, epsilon = 1e-15);
        // First three together, last two together; cluster 0 = high rates.
        assert_eq!(model.cluster_of(&"a".into()), Some(1));
        assert_eq!(model.cluster_of(&"b".into()), Some(1));
        assert_eq!(model.cluster_of(&"c".into()), Some(1));
        assert_eq!(model.cluster_of(&"d".into()), Some(0));
        assert_eq!(model.cluster_of(&"e".into()), Some(0));
    }

    #[test]
    fn degenerate_single_cluster() {
        let r = rates(&[("a", 0.3), ("b", 0.3), ("c", 0.3)]);
        let model = fit_kmeans(&r, 1, 0).unwrap();
        assert_eq!(model.centroids, vec![0.3]);
        assert_eq!(model.sse, 0.0);
    }

    #[test]
    fn two_points_sorted_descending() {
        let r = rates(&[("a", 0.0), ("b", 1.0)]);
        let model = fit_kmeans(&r, 2, 3).unwrap();
        assert_eq!(model.centroids, vec![1.0, 0.0]);
        assert_eq!(model.cluster_of(&"b".into()), Some(0));
    }

    #[test]
    fn too_few_distinct_values() {
        let r = rates(&[("a", 0.5), ("b", 0.5)]);
        let e = fit_kmeans(&r, 2, 0).unwrap_err();
        assert_eq!(e, ClusterError::TooFewDistinct { k: 2, distinct: 1 });
    }

    #[test]
    fn deterministic_given_seed() {
        let r = rates(&[("a", 0.01), ("b", 0.4), ("c", 0.39), ("d", 0.02), ("e", 0.8)]);
        let m1 = fit_kmeans(&r, 3, 99).unwrap();
        let m2 = fit_kmeans(&r, 3, 99).unwrap();
        assert_eq!(m1.centroids, m2.centroids);
        assert_eq!(m1.assignment, m2.assignment);
    }

    #[test]
    fn assign_ties_go_to_lower_index() {
        let model = ClusterModel {
            k: 2,
            centroids: vec![0.75, 0.25],
            assignment: BTreeMap::new(),
            sse: 0.0,
        };
        // 0.5 is exactly equidistant; lower cluster index wins.
        assert_eq!(model.assign(0.5), 0);
    }

    #[test]
    fn works_at_f32() {
        let r: BTreeMap<SegmentId, f32> = [("a", 0.01f32), ("b", 0.02), ("c", 0.5)]
            .iter()
            .map(|(s, r)| ((*s).into(), *r))
            .collect();
        let model = fit_kmeans(&r, 2, 1).unwrap();
        assert_eq!(model.cluster_of(&"c".into()), Some(0));
    }
}
