//! Spatial joins: incidents to their nearest segment, segments to their
//! nearest weather station.

use crate::domain::{Incident, RoadSegment, SegmentId};
use crate::geo::{haversine_km, point_to_polyline_km};
use crate::Scalar;

/// Incidents farther than this from every polyline stay unmapped.
pub const MAP_THRESHOLD_KM: Scalar = 0.025;

/// Bounding-box prefilter margin in degrees; comfortably larger than the
/// mapping threshold at any latitude of interest.
const BBOX_MARGIN_DEG: Scalar = 0.002;

/// Per-segment polyline bounding box for the cheap prefilter.
#[derive(Debug, Clone, Copy)]
struct PolyBox {
    lat_min: Scalar,
    lat_max: Scalar,
    lon_min: Scalar,
    lon_max: Scalar,
}

impl PolyBox {
    fn of(polyline: &[(Scalar, Scalar)]) -> Self {
        let mut b = PolyBox {
            lat_min: Scalar::INFINITY,
            lat_max: Scalar::NEG_INFINITY,
            lon_min: Scalar::INFINITY,
            lon_max: Scalar::NEG_INFINITY,
        };
        for &(lat, lon) in polyline {
            b.lat_min = b.lat_min.min(lat);
            b.lat_max = b.lat_max.max(lat);
            b.lon_min = b.lon_min.min(lon);
            b.lon_max = b.lon_max.max(lon);
        }
        b
    }

    fn near(&self, lat: Scalar, lon: Scalar) -> bool {
        lat >= self.lat_min - BBOX_MARGIN_DEG
            && lat <= self.lat_max + BBOX_MARGIN_DEG
            && lon >= self.lon_min - BBOX_MARGIN_DEG
            && lon <= self.lon_max + BBOX_MARGIN_DEG
    }
}

/// Reusable incident-to-segment mapper over a fixed segment set.
pub struct SegmentMapper<'a> {
    segments: &'a [RoadSegment],
    boxes: Vec<PolyBox>,
}

impl<'a> SegmentMapper<'a> {
    pub fn new(segments: &'a [RoadSegment]) -> Self {
        let boxes = segments.iter().map(|s| PolyBox::of(&s.polyline)).collect();
        SegmentMapper { segments, boxes }
    }

    /// Nearest segment within the threshold; ties break to the
    /// lexicographically smallest segment id.
    pub fn map(&self, lat: Scalar, lon: Scalar) -> Option<&'a SegmentId> {
        let mut best: Option<(Scalar, &SegmentId)> = None;
        for (seg, bbox) in self.segments.iter().zip(&self.boxes) {
            if !bbox.near(lat, lon) {
                continue;
            }
            let d = point_to_polyline_km((lat, lon), &seg.polyline);
            let better = match best {
                None => true,
                Some((bd, bid)) => d < bd || (d == bd && seg.id < *bid),
            };
            if better {
                best = Some((d, &seg.id));
            }
        }
        best.and_then(|(d, id)| (d <= MAP_THRESHOLD_KM).then_some(id))
    }
}

/// Map one incident to the id of its nearest segment, if within threshold.
pub fn map_incident_to_segment(
    incident: &Incident,
    segments: &[RoadSegment],
) -> Option<SegmentId> {
    SegmentMapper::new(segments)
        .map(incident.lat, incident.lon)
        .cloned()
}

/// Argmin haversine distance from a point to the stations; ties break to the
/// smallest station id.
pub fn nearest_station<'a, I>(point: (Scalar, Scalar), stations: I) -> Option<&'a str>
where
    I: IntoIterator<Item = (&'a str, (Scalar, Scalar))>,
{
    let mut best: Option<(Scalar, &str)> = None;
    for (id, loc) in stations {
        let d = haversine_km(point, loc);
        let better = match best {
            None => true,
            Some((bd, bid)) => d < bd || (d == bd && id < bid),
        };
        if better {
            best = Some((d, id));
        }
    }
    best.map(|(_, id)| id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::DEG_PER_KM;

    fn seg(id: &str, polyline: Vec<(Scalar, Scalar)>) -> RoadSegment {
        RoadSegment {
            id: id.into(),
            road_name: "I-00".into(),
            isf: crate::ingest::features::compute_isf(&polyline).unwrap(),
            polyline,
            lanes: 2,
            miles: 1.0,
            free_flow_speed: 65.0,
        }
    }

    fn incident(lat: Scalar, lon: Scalar) -> Incident {
        Incident {
            id: "x".into(),
            lat,
            lon,
            timestamp: chrono::NaiveDate::from_ymd_opt(2019, 4, 3)
                .unwrap()
                .and_hms_opt(0, 0, 0)
                .unwrap(),
            severity: 0,
            segment_id: None,
        }
    }

    #[test]
    fn incident_within_threshold_is_assigned() {
        // 10 m north of an east-west segment.
        let segments = vec![
            seg("A", vec![(35.0, -90.0), (35.0, -89.9)]),
            seg("B", vec![(36.0, -90.0), (36.0, -89.9)]),
        ];
        let got = map_incident_to_segment(&incident(35.0 + 0.010 * DEG_PER_KM, -89.95), &segments);
        assert_eq!(got, Some("A".into()));
    }

    #[test]
    fn incident_beyond_threshold_is_unmapped() {
        // 30 m away from the only segment.
        let segments = vec![seg("A", vec![(35.0, -90.0), (35.0, -89.9)])];
        let got = map_incident_to_segment(&incident(35.0 + 0.030 * DEG_PER_KM, -89.95), &segments);
        assert_eq!(got, None);
    }

    #[test]
    fn incident_on_vertex_maps_at_distance_zero() {
        let segments = vec![seg("A", vec![(35.0, -90.0), (35.0, -89.9)])];
        let got = map_incident_to_segment(&incident(35.0, -90.0), &segments);
        assert_eq!(got, Some("A".into()));
    }

    #[test]
    fn exact_tie_breaks_to_smallest_id() {
        // Two identical geometries under different ids.
        let segments = vec![
            seg("Z", vec![(35.0, -90.0), (35.0, -89.9)]),
            seg("A", vec![(35.0, -90.0), (35.0, -89.9)]),
        ];
        let got = map_incident_to_segment(&incident(35.0, -89.95), &segments);
        assert_eq!(got, Some("A".into()));
    }

    #[test]
    fn single_station_wins() {
        let got = nearest_station((35.0, -90.0), [("S1", (40.0, -80.0))]);
        assert_eq!(got, Some("S1"));
    }

    #[test]
    fn equidistant_stations_tie_to_smallest_id() {
        let got = nearest_station(
            (35.0, -90.0),
            [("S2", (35.0, -89.0)), ("S1", (35.0, -91.0))],
        );
        assert_eq!(got, Some("S1"));
    }

    #[test]
    fn colocated_station_wins_among_many() {
        let stations: Vec<(String, (Scalar, Scalar))> = (0..40)
            .map(|i| (format!("S{i}"), (30.0 + i as Scalar * 0.3, -90.0)))
            .collect();
        let target = stations[7].1;
        let got = nearest_station(target, stations.iter().map(|(s, p)| (s.as_str(), *p)));
        assert_eq!(got, Some("S7"));
    }
}
