//! Derived features: inverse stretch factor, congestion ratio, 4-hour window
//! aggregation, and lagged incident counts.

use chrono::NaiveDateTime;

use crate::domain::TimeWindow;
use crate::ingest::IngestError;
use crate::scalar::Real;
use crate::Scalar;

/// Floor for the inverse stretch factor; a fully closed polyline has chord 0
/// and would otherwise fall out of the (0, 1] range.
const ISF_FLOOR: f64 = 1e-12;

/// Inverse stretch factor with a pluggable point metric: chord length over
/// path length, clamped into (0, 1]. Errors on zero-length polylines.
pub fn compute_isf_with<T, F>(polyline: &[(T, T)], metric: F) -> Result<T, IngestError>
where
    T: Real,
    F: Fn((T, T), (T, T)) -> T,
{
    if polyline.len() < 2 {
        return Err(IngestError::DegeneratePolyline {
            reason: format!("{} point(s); need at least 2", polyline.len()),
        });
    }
    let path: T = polyline.windows(2).map(|w| metric(w[0], w[1])).sum();
    if !(path > T::zero()) {
        return Err(IngestError::DegeneratePolyline {
            reason: "total length is zero".into(),
        });
    }
    let chord = metric(polyline[0], polyline[polyline.len() - 1]);
    Ok((chord / path).max(T::of(ISF_FLOOR)).min(T::one()))
}

/// Inverse stretch factor under the haversine metric.
pub fn compute_isf<T: Real>(polyline: &[(T, T)]) -> Result<T, IngestError> {
    compute_isf_with(polyline, crate::geo::haversine_km)
}

/// Congestion ratio `max(0, (free_flow - current) / free_flow)`; defined as 0
/// when free-flow speed is 0 (degenerate rows are also flagged upstream).
pub fn congestion<T: Real>(free_flow: T, current: T) -> T {
    if !(free_flow > T::zero()) {
        return T::zero();
    }
    ((free_flow - current) / free_flow).max(T::zero())
}

/// Weather values aggregated over one 4-hour window: means, except
/// precipitation which accumulates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WeatherAggregate {
    pub temperature: Scalar,
    pub precipitation: Scalar,
    pub visibility: Scalar,
    pub wind_speed: Scalar,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WeatherAccumulator {
    temperature: Scalar,
    precipitation: Scalar,
    visibility: Scalar,
    wind_speed: Scalar,
    count: usize,
}

impl WeatherAccumulator {
    pub fn push(&mut self, temperature: Scalar, precipitation: Scalar, visibility: Scalar, wind_speed: Scalar) {
        self.temperature += temperature;
        self.precipitation += precipitation;
        self.visibility += visibility;
        self.wind_speed += wind_speed;
        self.count += 1;
    }

    /// `None` marks a missing window (no observations); the cell is dropped.
    pub fn finish(&self) -> Option<WeatherAggregate> {
        (self.count > 0).then(|| WeatherAggregate {
            temperature: self.temperature / self.count as Scalar,
            precipitation: self.precipitation,
            visibility: self.visibility / self.count as Scalar,
            wind_speed: self.wind_speed / self.count as Scalar,
        })
    }
}

/// Traffic values aggregated over one 4-hour window: arithmetic means of the
/// per-observation congestion ratio and confidence score.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrafficAggregate {
    pub congestion: Scalar,
    pub confidence: Scalar,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrafficAccumulator {
    congestion: Scalar,
    confidence: Scalar,
    count: usize,
}

impl TrafficAccumulator {
    pub fn push(&mut self, free_flow: Scalar, current: Scalar, confidence: Scalar) {
        self.congestion += congestion(free_flow, current);
        self.confidence += confidence;
        self.count += 1;
    }

    pub fn finish(&self) -> Option<TrafficAggregate> {
        (self.count > 0).then(|| TrafficAggregate {
            congestion: self.congestion / self.count as Scalar,
            confidence: self.confidence / self.count as Scalar,
        })
    }
}

/// Lag horizons, all ending at the cell's window start (half-open intervals
/// `[start - span, start)`, so nothing at or after the start leaks in).
pub const LAG_HORIZONS_HOURS: [i64; 4] = [4, 24, 7 * 24, 30 * 24];

/// Incident counts on one segment over the four lag horizons, from that
/// segment's time-sorted incident history.
pub fn lag_features(sorted_history: &[NaiveDateTime], window: &TimeWindow) -> [u32; 4] {
    debug_assert!(sorted_history.windows(2).all(|w| w[0] <= w[1]));
    let start = window.start();
    let upper = sorted_history.partition_point(|&t| t < start);
    let mut out = [0u32; 4];
    for (slot, hours) in out.iter_mut().zip(LAG_HORIZONS_HOURS) {
        let from = start - chrono::Duration::hours(hours);
        let lower = sorted_history.partition_point(|&t| t < from);
        *slot = (upper - lower) as u32;
    }
    out
}
