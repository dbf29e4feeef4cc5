//! Core records shared by every other module: segments, incidents,
//! spatio-temporal cells, time windows, and grid locations.
//!
//! All of these are immutable after construction and safe to share read-only
//! across workers.

use std::fmt;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Opaque roadway-segment identifier. Ordering is lexicographic and is the
/// tie-break rule used everywhere a segment must be picked deterministically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegmentId(pub String);

impl SegmentId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SegmentId {
    fn from(s: &str) -> Self {
        SegmentId(s.to_owned())
    }
}

/// One highway segment: an edge of the study graph.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadSegment {
    pub id: SegmentId,
    pub road_name: String,
    /// Ordered (lat, lon) degree pairs; always >= 2 points.
    pub polyline: Vec<(Scalar, Scalar)>,
    pub lanes: u32,
    /// Length in miles, > 0.
    pub miles: Scalar,
    /// Inverse stretch factor in (0, 1]: chord length over polyline length.
    pub isf: Scalar,
    /// Free-flow speed in mph, >= 0.
    pub free_flow_speed: Scalar,
}

impl RoadSegment {
    /// Arithmetic mean of the polyline vertices.
    pub fn representative_point(&self) -> (Scalar, Scalar) {
        crate::geo::centroid(&self.polyline)
    }
}

/// One reported incident. `severity` is carried through ingestion but unused
/// by every model and by the dispatcher.
#[derive(Debug, Clone, PartialEq)]
pub struct Incident {
    pub id: String,
    pub lat: Scalar,
    pub lon: Scalar,
    /// UTC instant.
    pub timestamp: NaiveDateTime,
    pub severity: u32,
    /// Filled by nearest-segment mapping; `None` if farther than the
    /// mapping threshold from every segment.
    pub segment_id: Option<SegmentId>,
}

impl Incident {
    /// Local instant under the study's fixed UTC offset.
    pub fn local_time(&self, utc_offset_hours: i32) -> NaiveDateTime {
        self.timestamp + chrono::Duration::hours(utc_offset_hours as i64)
    }
}

/// Number of 4-hour windows per day.
pub const WINDOWS_PER_DAY: u8 = 6;
/// Hours per window.
pub const WINDOW_HOURS: u8 = 4;

/// One of the six 4-hour windows of a calendar day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeWindow {
    pub date: NaiveDate,
    /// In [0, 5]: floor(local hour / 4).
    pub index: u8,
}

impl TimeWindow {
    /// Local instant the window begins (inclusive).
    pub fn start(&self) -> NaiveDateTime {
        self.date
            .and_hms_opt(self.index as u32 * WINDOW_HOURS as u32, 0, 0)
            .expect("window index in range")
    }

    /// Local instant the window ends (exclusive).
    pub fn end(&self) -> NaiveDateTime {
        self.start() + chrono::Duration::hours(WINDOW_HOURS as i64)
    }

    /// True when the window falls on a Saturday or Sunday.
    pub fn is_weekend(&self) -> bool {
        matches!(self.date.weekday(), Weekday::Sat | Weekday::Sun)
    }

    /// The window immediately before this one.
    pub fn prev(&self) -> TimeWindow {
        window_of(self.start() - chrono::Duration::hours(WINDOW_HOURS as i64))
    }
}

impl fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.date, self.index)
    }
}

/// Window containing a local instant: index = floor(hour / 4), date preserved.
pub fn window_of(local: NaiveDateTime) -> TimeWindow {
    TimeWindow {
        date: local.date(),
        index: (local.hour() / WINDOW_HOURS as u32) as u8,
    }
}

/// One (segment, 4-hour window) observation: the learning row.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub segment_id: SegmentId,
    pub window: TimeWindow,
    /// Ordered feature values; names live on the owning [`Dataset`].
    pub features: Vec<Scalar>,
    pub incident_count: u32,
    pub cluster_id: Option<usize>,
}

impl CellRecord {
    /// Binary label: 1 iff at least one incident occurred in the cell.
    pub fn label(&self) -> u8 {
        self.incident_count.min(1) as u8
    }
}

/// The master learning table: a shared feature schema plus one record per
/// (retained segment, window).
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub records: Vec<CellRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Geographic bounding box in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundingBox {
    pub lat_min: Scalar,
    pub lat_max: Scalar,
    pub lon_min: Scalar,
    pub lon_max: Scalar,
}

impl BoundingBox {
    pub fn is_valid(&self) -> bool {
        self.lat_min < self.lat_max && self.lon_min < self.lon_max
    }

    /// Haversine length of the box diagonal, in km.
    pub fn diameter_km(&self) -> Scalar {
        crate::geo::haversine_km((self.lat_min, self.lon_min), (self.lat_max, self.lon_max))
    }

    pub fn contains(&self, lat: Scalar, lon: Scalar) -> bool {
        lat >= self.lat_min && lat <= self.lat_max && lon >= self.lon_min && lon <= self.lon_max
    }
}

/// One candidate responder location: a grid cell with its center point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridLocation {
    pub row: usize,
    pub col: usize,
    /// (lat, lon) of the cell midpoint.
    pub center: (Scalar, Scalar),
}
