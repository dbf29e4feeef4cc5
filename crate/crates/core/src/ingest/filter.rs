//! Segment filtering: keep the top fraction of segments by positive-cell
//! count, standing in for the draft's segment-grouping step.

use std::collections::BTreeMap;

use chrono::NaiveDateTime;

use crate::domain::{Dataset, SegmentId};
use crate::ingest::IngestError;
use crate::Scalar;

/// What the filter kept and what it cost.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterReport {
    pub segments_total: usize,
    pub segments_kept: usize,
    pub cells_retained: usize,
    pub incidents_total: u64,
    pub incidents_retained: u64,
    /// Fraction of dataset incidents on the retained segments.
    pub retained_incident_fraction: Scalar,
    /// Fraction of retained cells with zero incidents.
    pub sparsity: Scalar,
}

/// Keep the `ceil(q * n)` segments with the most positive cells, counting
/// only cells whose window starts before `count_before` when given (the
/// training range); ties break to the smaller segment id. The reduced
/// dataset keeps every window of the retained segments.
pub fn filter_segments(
    dataset: &Dataset,
    keep_fraction: Scalar,
    count_before: Option<NaiveDateTime>,
) -> Result<(Dataset, FilterReport), IngestError> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(IngestError::BadKeepFraction(keep_fraction));
    }

    let mut positives: BTreeMap<&SegmentId, u64> = BTreeMap::new();
    for rec in &dataset.records {
        let entry = positives.entry(&rec.segment_id).or_insert(0);
        let in_count_range = count_before.is_none_or(|cut| rec.window.start() < cut);
        if in_count_range && rec.label() == 1 {
            *entry += 1;
        }
    }
    let n = positives.len();
    let keep = (((keep_fraction * n as Scalar) - 1e-9).ceil() as usize).clamp(1, n);

    let mut ranked: Vec<(&SegmentId, u64)> = positives.into_iter().collect();
    // BTreeMap iteration is id-ascending, so a stable sort by descending
    // count leaves ties in id order.
    ranked.sort_by_key(|&(_, count)| std::cmp::Reverse(count));
    let retained: std::collections::BTreeSet<SegmentId> = ranked
        .into_iter()
        .take(keep)
        .map(|(id, _)| id.clone())
        .collect();

    let mut records = Vec::new();
    let mut incidents_total = 0u64;
    let mut incidents_retained = 0u64;
    let mut zero_cells = 0u64;
    for rec in &dataset.records {
        incidents_total += rec.incident_count as u64;
        if retained.contains(&rec.segment_id) {
            incidents_retained += rec.incident_count as u64;
            if rec.incident_count == 0 {
                zero_cells += 1;
            }
            records.push(rec.clone());
        }
    }
    if records.is_empty() {
        return Err(IngestError::EmptyDataset);
    }
    let report = FilterReport {
        segments_total: n,
        segments_kept: keep,
        cells_retained: records.len(),
        incidents_total,
        incidents_retained,
        retained_incident_fraction: if incidents_total > 0 {
            incidents_retained as Scalar / incidents_total as Scalar
        } else {
            0.0
        },
        sparsity: zero_cells as Scalar / records.len() as Scalar,
    };
    Ok((
        Dataset {
            feature_names: dataset.feature_names.clone(),
            records,
        },
        report,
    ))
}
