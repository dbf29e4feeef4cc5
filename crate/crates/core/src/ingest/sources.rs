//! CSV readers for the four source tables. Unparseable or
//! invariant-violating rows are fatal and reported with their line numbers.

use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};

use crate::domain::{Incident, RoadSegment, SegmentId};
use crate::ingest::{features, IngestError};
use crate::Scalar;

/// One hourly weather reading from a station.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherObservation {
    pub station_id: String,
    pub lat: Scalar,
    pub lon: Scalar,
    /// UTC instant.
    pub timestamp: NaiveDateTime,
    pub temperature: Scalar,
    pub precipitation: Scalar,
    pub visibility: Scalar,
    pub wind_speed: Scalar,
}

/// One traffic reading for a segment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficObservation {
    pub segment_id: SegmentId,
    /// UTC instant.
    pub timestamp: NaiveDateTime,
    pub current_speed: Scalar,
    pub free_flow_speed: Scalar,
    pub confidence: Scalar,
}

/// Accepts `YYYY-MM-DD HH:MM[:SS]` and ISO-8601 `T` variants with an optional
/// trailing `Z`; the instant is taken as UTC.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim().trim_end_matches('Z');
    for fmt in [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    None
}

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

/// Parses either WKT `LINESTRING (lon lat, lon lat, ...)` or a plain
/// semicolon-separated `lat lon;lat lon` list into (lat, lon) pairs.
pub fn parse_polyline(s: &str) -> Result<Vec<(Scalar, Scalar)>, String> {
    let s = s.trim();
    if s.to_ascii_uppercase().starts_with("LINESTRING") {
        let open = s.find('(').ok_or("missing '(' in LINESTRING")?;
        let close = s.rfind(')').ok_or("missing ')' in LINESTRING")?;
        if close <= open {
            return Err("malformed LINESTRING".into());
        }
        let body = &s[open + 1..close];
        let mut pts = Vec::new();
        for pair in body.split(',') {
            let mut it = pair.split_whitespace();
            let lon: Scalar = it
                .next()
                .ok_or("empty coordinate pair")?
                .parse()
                .map_err(|_| format!("bad longitude in '{pair}'"))?;
            let lat: Scalar = it
                .next()
                .ok_or_else(|| format!("missing latitude in '{pair}'"))?
                .parse()
                .map_err(|_| format!("bad latitude in '{pair}'"))?;
            pts.push((lat, lon));
        }
        Ok(pts)
    } else {
        let mut pts = Vec::new();
        for pair in s.split(';') {
            let mut it = pair.split_whitespace();
            let lat: Scalar = it
                .next()
                .ok_or("empty coordinate pair")?
                .parse()
                .map_err(|_| format!("bad latitude in '{pair}'"))?;
            let lon: Scalar = it
                .next()
                .ok_or_else(|| format!("missing longitude in '{pair}'"))?
                .parse()
                .map_err(|_| format!("bad longitude in '{pair}'"))?;
            pts.push((lat, lon));
        }
        Ok(pts)
    }
}

struct RowErrors {
    file: String,
    rows: Vec<(u64, String)>,
}

impl RowErrors {
    fn new(path: &Path) -> Self {
        RowErrors {
            file: path.display().to_string(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, line: u64, msg: impl Into<String>) {
        self.rows.push((line, msg.into()));
    }

    fn finish(self) -> Result<(), IngestError> {
        if self.rows.is_empty() {
            Ok(())
        } else {
            Err(IngestError::BadRows {
                file: self.file,
                rows: self.rows,
            })
        }
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>, IngestError> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| IngestError::Open {
            file: path.display().to_string(),
            source: Box::new(e),
        })
}

fn header_index(
    rdr: &mut csv::Reader<std::fs::File>,
    path: &Path,
    names: &[&str],
) -> Result<Vec<usize>, IngestError> {
    let headers = rdr.headers().map_err(|e| IngestError::Open {
        file: path.display().to_string(),
        source: Box::new(e),
    })?;
    let mut idx = Vec::with_capacity(names.len());
    for name in names {
        let found = headers.iter().position(|h| h.eq_ignore_ascii_case(name));
        match found {
            Some(i) => idx.push(i),
            None => {
                return Err(IngestError::MissingColumn {
                    file: path.display().to_string(),
                    column: (*name).to_string(),
                })
            }
        }
    }
    Ok(idx)
}

fn field(rec: &csv::StringRecord, idx: usize) -> &str {
    rec.get(idx).unwrap_or("")
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, csv::Position::line)
}

/// segments.csv: id, road_name, wkt_polyline, lanes, miles, free_flow_speed.
/// The polyline column accepts WKT or a `lat lon;lat lon` list; iSF is
/// derived here.
pub fn read_segments(path: &Path) -> Result<Vec<RoadSegment>, IngestError> {
    let mut rdr = open_reader(path)?;
    let cols = header_index(
        &mut rdr,
        path,
        &["id", "road_name", "wkt_polyline", "lanes", "miles", "free_flow_speed"],
    )?;
    let mut errs = RowErrors::new(path);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                errs.push(e.position().map_or(0, csv::Position::line), e.to_string());
                continue;
            }
        };
        let line = line_of(&rec);
        let id = field(&rec, cols[0]);
        if id.is_empty() {
            errs.push(line, "empty segment id");
            continue;
        }
        let polyline = match parse_polyline(field(&rec, cols[2])) {
            Ok(p) => p,
            Err(m) => {
                errs.push(line, m);
                continue;
            }
        };
        if polyline.len() < 2 {
            errs.push(line, "polyline needs at least 2 points");
            continue;
        }
        let lanes: u32 = match field(&rec, cols[3]).parse() {
            Ok(v) if v > 0 => v,
            _ => {
                errs.push(line, "lanes must be a positive integer");
                continue;
            }
        };
        let miles: Scalar = match field(&rec, cols[4]).parse() {
            Ok(v) if v > 0.0 => v,
            _ => {
                errs.push(line, "miles must be > 0");
                continue;
            }
        };
        let free_flow_speed: Scalar = match field(&rec, cols[5]).parse() {
            Ok(v) if v >= 0.0 => v,
            _ => {
                errs.push(line, "free_flow_speed must be >= 0");
                continue;
            }
        };
        let isf = match features::compute_isf(&polyline) {
            Ok(v) => v,
            Err(e) => {
                errs.push(line, e.to_string());
                continue;
            }
        };
        out.push(RoadSegment {
            id: id.into(),
            road_name: field(&rec, cols[1]).to_string(),
            polyline,
            lanes,
            miles,
            isf,
            free_flow_speed,
        });
    }
    errs.finish()?;
    Ok(out)
}

/// incidents.csv: id, lat, lon, timestamp (ISO-8601), severity.
pub fn read_incidents(path: &Path) -> Result<Vec<Incident>, IngestError> {
    let mut rdr = open_reader(path)?;
    let cols = header_index(&mut rdr, path, &["id", "lat", "lon", "timestamp", "severity"])?;
    let mut errs = RowErrors::new(path);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                errs.push(e.position().map_or(0, csv::Position::line), e.to_string());
                continue;
            }
        };
        let line = line_of(&rec);
        let (Ok(lat), Ok(lon)) = (
            field(&rec, cols[1]).parse::<Scalar>(),
            field(&rec, cols[2]).parse::<Scalar>(),
        ) else {
            errs.push(line, "bad coordinates");
            continue;
        };
        let Some(timestamp) = parse_timestamp(field(&rec, cols[3])) else {
            errs.push(line, format!("bad timestamp '{}'", field(&rec, cols[3])));
            continue;
        };
        let Ok(severity) = field(&rec, cols[4]).parse::<u32>() else {
            errs.push(line, "severity must be a non-negative integer");
            continue;
        };
        out.push(Incident {
            id: field(&rec, cols[0]).to_string(),
            lat,
            lon,
            timestamp,
            severity,
            segment_id: None,
        });
    }
    errs.finish()?;
    Ok(out)
}

/// weather.csv: station_id, lat, lon, timestamp, temperature, precipitation,
/// visibility, wind_speed.
pub fn read_weather(path: &Path) -> Result<Vec<WeatherObservation>, IngestError> {
    let mut rdr = open_reader(path)?;
    let cols = header_index(
        &mut rdr,
        path,
        &[
            "station_id",
            "lat",
            "lon",
            "timestamp",
            "temperature",
            "precipitation",
            "visibility",
            "wind_speed",
        ],
    )?;
    let mut errs = RowErrors::new(path);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                errs.push(e.position().map_or(0, csv::Position::line), e.to_string());
                continue;
            }
        };
        let line = line_of(&rec);
        let parse_f = |i: usize| field(&rec, cols[i]).parse::<Scalar>();
        let (Ok(lat), Ok(lon), Ok(temperature), Ok(precipitation), Ok(visibility), Ok(wind_speed)) =
            (parse_f(1), parse_f(2), parse_f(4), parse_f(5), parse_f(6), parse_f(7))
        else {
            errs.push(line, "bad numeric field");
            continue;
        };
        let Some(timestamp) = parse_timestamp(field(&rec, cols[3])) else {
            errs.push(line, format!("bad timestamp '{}'", field(&rec, cols[3])));
            continue;
        };
        if precipitation < 0.0 || visibility < 0.0 {
            errs.push(line, "precipitation and visibility must be >= 0");
            continue;
        }
        out.push(WeatherObservation {
            station_id: field(&rec, cols[0]).to_string(),
            lat,
            lon,
            timestamp,
            temperature,
            precipitation,
            visibility,
            wind_speed,
        });
    }
    errs.finish()?;
    Ok(out)
}

/// traffic.csv: segment_id, timestamp, current_speed, free_flow_speed,
/// confidence.
pub fn read_traffic(path: &Path) -> Result<Vec<TrafficObservation>, IngestError> {
    let mut rdr = open_reader(path)?;
    let cols = header_index(
        &mut rdr,
        path,
        &["segment_id", "timestamp", "current_speed", "free_flow_speed", "confidence"],
    )?;
    let mut errs = RowErrors::new(path);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                errs.push(e.position().map_or(0, csv::Position::line), e.to_string());
                continue;
            }
        };
        let line = line_of(&rec);
        let Some(timestamp) = parse_timestamp(field(&rec, cols[1])) else {
            errs.push(line, format!("bad timestamp '{}'", field(&rec, cols[1])));
            continue;
        };
        let parse_f = |i: usize| field(&rec, cols[i]).parse::<Scalar>();
        let (Ok(current_speed), Ok(free_flow_speed), Ok(confidence)) =
            (parse_f(2), parse_f(3), parse_f(4))
        else {
            errs.push(line, "bad numeric field");
            continue;
        };
        if current_speed < 0.0 || free_flow_speed < 0.0 {
            errs.push(line, "speeds must be non-negative");
            continue;
        }
        out.push(TrafficObservation {
            segment_id: field(&rec, cols[0]).into(),
            timestamp,
            current_speed,
            free_flow_speed,
            confidence,
        });
    }
    errs.finish()?;
    Ok(out)
}
