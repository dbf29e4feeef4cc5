//! Parse the four source tables, perform the spatial joins, derive the
//! feature catalog, and emit the master cell dataset.
//!
//! Missing data is dropped, never imputed: a cell with no weather or traffic
//! observations in its window is counted and removed. Output order is fixed
//! (segment id, then window) so runs are byte-identical regardless of input
//! order or worker count.

pub mod features;
pub mod filter;
pub mod join;
pub mod sources;

use std::collections::HashMap;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use thiserror::Error;

use crate::domain::{CellRecord, Dataset, Incident, RoadSegment, TimeWindow, WINDOWS_PER_DAY};
use crate::Scalar;

pub use features::{compute_isf, compute_isf_with, congestion, lag_features};
pub use filter::{filter_segments, FilterReport};
pub use join::{map_incident_to_segment, nearest_station, SegmentMapper};
pub use sources::{TrafficObservation, WeatherObservation};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot open {file}: {source}")]
    Open {
        file: String,
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("{file} is missing required column '{column}'")]
    MissingColumn { file: String, column: String },
    #[error("{file} has {} unparseable row(s), first at line {}: {}", rows.len(), rows[0].0, rows[0].1)]
    BadRows {
        file: String,
        rows: Vec<(u64, String)>,
    },
    #[error("degenerate polyline: {reason}")]
    DegeneratePolyline { reason: String },
    #[error("keep fraction must be in (0, 1], got {0}")]
    BadKeepFraction(Scalar),
    #[error("no segments loaded")]
    NoSegments,
    #[error("dataset is empty after ingestion")]
    EmptyDataset,
    #[error("study range is empty: start {start} after end {end}")]
    EmptyStudyRange { start: NaiveDate, end: NaiveDate },
}

/// The parsed source tables.
#[derive(Debug, Clone, Default)]
pub struct SourceTables {
    pub segments: Vec<RoadSegment>,
    pub incidents: Vec<Incident>,
    pub weather: Vec<WeatherObservation>,
    pub traffic: Vec<TrafficObservation>,
}

impl SourceTables {
    pub fn load(
        segments: &Path,
        incidents: &Path,
        weather: &Path,
        traffic: &Path,
    ) -> Result<Self, IngestError> {
        Ok(SourceTables {
            segments: sources::read_segments(segments)?,
            incidents: sources::read_incidents(incidents)?,
            weather: sources::read_weather(weather)?,
            traffic: sources::read_traffic(traffic)?,
        })
    }
}

/// Ingestion parameters: the fixed local-time offset and the study range
/// (inclusive calendar days).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestConfig {
    pub timezone_offset_hours: i32,
    pub study_start: NaiveDate,
    pub study_end: NaiveDate,
}

/// Ingestion accounting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetReport {
    pub incidents_total: usize,
    pub incidents_in_range: usize,
    pub incidents_mapped: usize,
    pub incidents_unmapped: usize,
    pub cells_emitted: usize,
    pub cells_dropped_missing: usize,
    /// Sum of incident counts over emitted cells; equals the mapped incidents
    /// in retained cells (drops are also counted above).
    pub incidents_in_cells: u64,
}

/// The canonical feature schema, in emitted column order.
pub const FEATURE_NAMES: [&str; 16] = [
    "time_of_day",
    "weekend",
    "lanes",
    "miles",
    "isf",
    "free_flow_speed",
    "temperature",
    "precipitation",
    "visibility",
    "wind_speed",
    "congestion",
    "traffic_confidence",
    "incidents_last_window",
    "incidents_last_day",
    "incidents_last_week",
    "incidents_last_month",
];

pub fn feature_names() -> Vec<String> {
    FEATURE_NAMES.iter().map(|s| (*s).to_string()).collect()
}

fn window_slot(cfg: &IngestConfig, local: NaiveDateTime) -> Option<u32> {
    let date = local.date();
    if date < cfg.study_start || date > cfg.study_end {
        return None;
    }
    let day = (date - cfg.study_start).num_days() as u32;
    let w = crate::domain::window_of(local);
    Some(day * WINDOWS_PER_DAY as u32 + w.index as u32)
}

/// Everything build_dataset produces: the master dataset, the accounting
/// report, and the mapped in-range incidents (segment ids filled).
#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub dataset: Dataset,
    pub report: DatasetReport,
    pub mapped_incidents: Vec<Incident>,
}

/// One CellRecord per (segment, window) over the study range, with all
/// Table-style features; cells with a missing weather or traffic window are
/// dropped and counted.
pub fn build_dataset(sources: &SourceTables, cfg: &IngestConfig) -> Result<BuildOutput, IngestError> {
    if sources.segments.is_empty() {
        return Err(IngestError::NoSegments);
    }
    if cfg.study_start > cfg.study_end {
        return Err(IngestError::EmptyStudyRange {
            start: cfg.study_start,
            end: cfg.study_end,
        });
    }
    let n_days = (cfg.study_end - cfg.study_start).num_days() as u32 + 1;
    let n_slots = n_days * WINDOWS_PER_DAY as u32;

    let mut segments: Vec<&RoadSegment> = sources.segments.iter().collect();
    segments.sort_by(|a, b| a.id.cmp(&b.id));
    let seg_index: HashMap<&str, usize> = segments
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();

    // Incident mapping and per-segment histories.
    let mapper = join::SegmentMapper::new(&sources.segments);
    let mut report = DatasetReport {
        incidents_total: sources.incidents.len(),
        ..DatasetReport::default()
    };
    let mut mapped_incidents = Vec::new();
    let mut history: Vec<Vec<NaiveDateTime>> = vec![Vec::new(); segments.len()];
    let mut counts: HashMap<(usize, u32), u32> = HashMap::new();
    for inc in &sources.incidents {
        let local = inc.local_time(cfg.timezone_offset_hours);
        let date = local.date();
        if date < cfg.study_start || date > cfg.study_end {
            continue;
        }
        report.incidents_in_range += 1;
        let Some(seg_id) = mapper.map(inc.lat, inc.lon) else {
            report.incidents_unmapped += 1;
            continue;
        };
        report.incidents_mapped += 1;
        let si = seg_index[seg_id.as_str()];
        history[si].push(local);
        if let Some(slot) = window_slot(cfg, local) {
            *counts.entry((si, slot)).or_insert(0) += 1;
        }
        let mut mapped = inc.clone();
        mapped.segment_id = Some(seg_id.clone());
        mapped_incidents.push(mapped);
    }
    for h in &mut history {
        h.sort_unstable();
    }

    // Weather: station registry, nearest station per segment, per-window
    // aggregates keyed by (station, slot).
    let mut station_pos: Vec<(String, (Scalar, Scalar))> = Vec::new();
    let mut station_index: HashMap<&str, usize> = HashMap::new();
    for obs in &sources.weather {
        if !station_index.contains_key(obs.station_id.as_str()) {
            station_pos.push((obs.station_id.clone(), (obs.lat, obs.lon)));
        }
    }
    station_pos.sort_by(|a, b| a.0.cmp(&b.0));
    for (i, (id, _)) in station_pos.iter().enumerate() {
        station_index.insert(id.as_str(), i);
    }
    let mut weather_agg: HashMap<(usize, u32), features::WeatherAccumulator> = HashMap::new();
    for obs in &sources.weather {
        let local = obs.timestamp + chrono::Duration::hours(cfg.timezone_offset_hours as i64);
        let Some(slot) = window_slot(cfg, local) else { continue };
        let wi = station_index[obs.station_id.as_str()];
        weather_agg
            .entry((wi, slot))
            .or_default()
            .push(obs.temperature, obs.precipitation, obs.visibility, obs.wind_speed);
    }
    let seg_station: Vec<Option<usize>> = segments
        .iter()
        .map(|s| {
            join::nearest_station(
                s.representative_point(),
                station_pos.iter().map(|(id, p)| (id.as_str(), *p)),
            )
            .map(|id| station_index[id])
        })
        .collect();

    // Traffic aggregates keyed by (segment, slot).
    let mut traffic_agg: HashMap<(usize, u32), features::TrafficAccumulator> = HashMap::new();
    for obs in &sources.traffic {
        let Some(&si) = seg_index.get(obs.segment_id.as_str()) else { continue };
        let local = obs.timestamp + chrono::Duration::hours(cfg.timezone_offset_hours as i64);
        let Some(slot) = window_slot(cfg, local) else { continue };
        traffic_agg
            .entry((si, slot))
            .or_default()
            .push(obs.free_flow_speed, obs.current_speed, obs.confidence);
    }

    // Emit cells in (segment id, window) order.
    let mut records = Vec::new();
    for (si, seg) in segments.iter().enumerate() {
        for slot in 0..n_slots {
            let date = cfg.study_start + chrono::Duration::days((slot / WINDOWS_PER_DAY as u32) as i64);
            let window = TimeWindow {
                date,
                index: (slot % WINDOWS_PER_DAY as u32) as u8,
            };
            let weather = seg_station[si]
                .and_then(|wi| weather_agg.get(&(wi, slot)))
                .and_then(features::WeatherAccumulator::finish);
            let traffic = traffic_agg
                .get(&(si, slot))
                .and_then(features::TrafficAccumulator::finish);
            let (Some(weather), Some(traffic)) = (weather, traffic) else {
                report.cells_dropped_missing += 1;
                continue;
            };
            let lags = features::lag_features(&history[si], &window);
            let incident_count = counts.get(&(si, slot)).copied().unwrap_or(0);
            let features = vec![
                window.index as Scalar,
                Scalar::from(u8::from(window.is_weekend())),
                seg.lanes as Scalar,
                seg.miles,
                seg.isf,
                seg.free_flow_speed,
                weather.temperature,
                weather.precipitation,
                weather.visibility,
                weather.wind_speed,
                traffic.congestion,
                traffic.confidence,
                lags[0] as Scalar,
                lags[1] as Scalar,
                lags[2] as Scalar,
                lags[3] as Scalar,
            ];
            report.incidents_in_cells += incident_count as u64;
            records.push(CellRecord {
                segment_id: seg.id.clone(),
                window,
                features,
                incident_count,
                cluster_id: None,
            });
        }
    }
    report.cells_emitted = records.len();
    if records.is_empty() {
        return Err(IngestError::EmptyDataset);
    }
    Ok(BuildOutput {
        dataset: Dataset {
            feature_names: feature_names(),
            records,
        },
        report,
        mapped_incidents,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::DEG_PER_KM;

    fn seg(id: &str, lat: Scalar) -> RoadSegment {
        let polyline = vec![(lat, -90.0), (lat, -89.9)];
        RoadSegment {
            id: id.into(),
            road_name: "I-00".into(),
            isf: features::compute_isf(&polyline).unwrap(),
            polyline,
            lanes: 2,
            miles: 5.6,
            free_flow_speed: 65.0,
        }
    }

    fn t(d: u32, h: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2019, 4, d).unwrap().and_hms_opt(h, 0, 0).unwrap()
    }

    fn incident(id: &str, lat: Scalar, lon: Scalar, ts: NaiveDateTime) -> Incident {
        Incident {
            id: id.into(),
            lat,
            lon,
            timestamp: ts,
            severity: 1,
            segment_id: None,
        }
    }

    fn weather_obs(ts: NaiveDateTime) -> WeatherObservation {
        WeatherObservation {
            station_id: "W1".into(),
            lat: 35.5,
            lon: -89.9,
            timestamp: ts,
            temperature: 60.0,
            precipitation: 0.1,
            visibility: 10.0,
            wind_speed: 5.0,
        }
    }

    fn traffic_obs(seg: &str, ts: NaiveDateTime) -> TrafficObservation {
        TrafficObservation {
            segment_id: seg.into(),
            timestamp: ts,
            current_speed: 52.0,
            free_flow_speed: 65.0,
            confidence: 0.9,
        }
    }

    fn full_sources(days: std::ops::RangeInclusive<u32>) -> SourceTables {
        let mut sources = SourceTables {
            segments: vec![seg("S1", 35.0), seg("S2", 35.2)],
            ..SourceTables::default()
        };
        for d in days {
            for h in 0..24 {
                sources.weather.push(weather_obs(t(d, h)));
                if h % 2 == 0 {
                    sources.traffic.push(traffic_obs("S1", t(d, h)));
                    sources.traffic.push(traffic_obs("S2", t(d, h)));
                }
            }
        }
        sources
    }

    fn cfg() -> IngestConfig {
        IngestConfig {
            timezone_offset_hours: 0,
            study_start: NaiveDate::from_ymd_opt(2019, 4, 1).unwrap(),
            study_end: NaiveDate::from_ymd_opt(2019, 4, 3).unwrap(),
        }
    }

    #[test]
    fn emits_one_cell_per_segment_window() {
        let mut sources = full_sources(1..=3);
        sources
            .incidents
            .push(incident("i1", 35.0 + 0.01 * DEG_PER_KM, -89.95, t(2, 9)));
        let out = build_dataset(&sources, &cfg()).unwrap();
        // 2 segments x 3 days x 6 windows.
        assert_eq!(out.dataset.records.len(), 36);
        assert_eq!(out.report.cells_dropped_missing, 0);
        assert_eq!(out.report.incidents_mapped, 1);
        assert_eq!(out.report.incidents_in_cells, 1);
        // Conservation: counts sum equals mapped incidents in cells.
        let total: u64 = out.dataset.records.iter().map(|r| r.incident_count as u64).sum();
        assert_eq!(total, out.report.incidents_in_cells);
        // The incident landed on S1, 2019-04-02 window 2.
        let hit = out
            .dataset
            .records
            .iter()
            .find(|r| r.incident_count > 0)
            .unwrap();
        assert_eq!(hit.segment_id, "S1".into());
        assert_eq!(hit.window.index, 2);
        // Lag features of the very next window see it.
        let next = out
            .dataset
            .records
            .iter()
            .find(|r| r.segment_id == "S1".into() && r.window.date == hit.window.date && r.window.index == 3)
            .unwrap();
        assert_eq!(next.features[12..16], [1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn missing_traffic_window_drops_cell() {
        let mut sources = full_sources(1..=3);
        // Remove S2's traffic on day 2 entirely.
        sources
            .traffic
            .retain(|o| !(o.segment_id == "S2".into() && o.timestamp.date() == NaiveDate::from_ymd_opt(2019, 4, 2).unwrap()));
        let out = build_dataset(&sources, &cfg()).unwrap();
        assert_eq!(out.report.cells_dropped_missing, 6);
        assert_eq!(out.dataset.records.len(), 30);
    }

    #[test]
    fn out_of_range_incidents_are_skipped() {
        let mut sources = full_sources(1..=3);
        sources
            .incidents
            .push(incident("late", 35.0, -89.95, t(20, 9)));
        let out = build_dataset(&sources, &cfg()).unwrap();
        assert_eq!(out.report.incidents_total, 1);
        assert_eq!(out.report.incidents_in_range, 0);
        assert_eq!(out.report.incidents_mapped, 0);
    }

    #[test]
    fn unmappable_incident_counted() {
        let mut sources = full_sources(1..=3);
        sources.incidents.push(incident("far", 38.0, -85.0, t(2, 9)));
        let out = build_dataset(&sources, &cfg()).unwrap();
        assert_eq!(out.report.incidents_unmapped, 1);
    }

    #[test]
    fn deterministic_output_under_input_shuffle() {
        let mut a = full_sources(1..=3);
        a.incidents.push(incident("i1", 35.2, -89.95, t(1, 13)));
        let mut b = a.clone();
        b.segments.reverse();
        b.weather.reverse();
        b.traffic.reverse();
        let out_a = build_dataset(&a, &cfg()).unwrap();
        let out_b = build_dataset(&b, &cfg()).unwrap();
        assert_eq!(out_a.dataset.records, out_b.dataset.records);
    }

    #[test]
    fn timezone_offset_shifts_windows() {
        let mut sources = full_sources(1..=3);
        sources.incidents.push(incident("i1", 35.0, -89.95, t(2, 3)));
        let mut cfg_local = cfg();
        cfg_local.timezone_offset_hours = 2;
        // 03:00 UTC + 2h = 05:00 local -> window 1.
        let out = build_dataset(&sources, &cfg_local).unwrap();
        let hit = out.dataset.records.iter().find(|r| r.incident_count > 0).unwrap();
        assert_eq!(hit.window.index, 1);
    }

    #[test]
    fn no_segments_is_fatal() {
        let sources = SourceTables::default();
        assert!(matches!(
            build_dataset(&sources, &cfg()).unwrap_err(),
            IngestError::NoSegments
        ));
    }
}
