//! Empirical-frequency baseline mirroring field practice: bucket rates by
//! (segment, time-of-day window, weekend) with a global fallback for buckets
//! never seen in training.

use std::collections::BTreeMap;

use crate::domain::{CellRecord, SegmentId, TimeWindow};
use crate::scalar::Real;

type BucketKey = (SegmentId, u8, bool);

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveModel<T = crate::Scalar> {
    /// (segment, window index, weekend) -> (positives, total).
    pub buckets: BTreeMap<BucketKey, (u32, u32)>,
    /// Overall training positive rate, used for unseen buckets.
    pub fallback: T,
}

impl<T: Real> NaiveModel<T> {
    pub fn fit(records: &[CellRecord]) -> Self {
        let mut buckets: BTreeMap<BucketKey, (u32, u32)> = BTreeMap::new();
        let mut positives = 0u64;
        for r in records {
            let key = (r.segment_id.clone(), r.window.index, r.window.is_weekend());
            let e = buckets.entry(key).or_insert((0, 0));
            e.0 += r.label() as u32;
            e.1 += 1;
            positives += r.label() as u64;
        }
        let fallback = if records.is_empty() {
            T::zero()
        } else {
            T::of_usize(positives as usize) / T::of_usize(records.len())
        };
        NaiveModel { buckets, fallback }
    }

    /// Empirical bucket rate, or the global fallback for unseen buckets.
    pub fn proba(&self, segment: &SegmentId, window: &TimeWindow) -> T {
        let key = (segment.clone(), window.index, window.is_weekend());
        match self.buckets.get(&key) {
            Some(&(pos, total)) if total > 0 => T::of_usize(pos as usize) / T::of_usize(total as usize),
            _ => self.fallback,
        }
    }
}
