//! Synthetic-world generation: four source CSVs with planted two-cluster
//! incident rates, known covariate effects, diurnal weather and traffic
//! structure, and a ground-truth parameter file for oracle checks.
//!
//! Incident counts per cell are drawn from a zero-inflated Poisson process
//! whose exceedance probability P(y >= 1) follows a logistic model in the
//! same window aggregates the ingest pipeline derives, so the planted
//! covariate effects are recoverable by the logistic forecaster.

use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{
    AllocationSection, DatasetSection, DispatchSection, EvaluationSection, ModelsSection,
    PathsSection, RunConfig, RunSection, StudySection,
};
use crate::domain::{BoundingBox, window_of, WINDOWS_PER_DAY};
use crate::ingest::features::{TrafficAccumulator, WeatherAccumulator};
use crate::models::ModelKind;
use crate::resample::ResampleMode;
use crate::rolling::Month;
use crate::Scalar;

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid synthetic spec: {0}")]
    Invalid(String),
    #[error("cannot write {file}: {source}")]
    Write {
        file: String,
        source: std::io::Error,
    },
    #[error("spec parse error: {0}")]
    Parse(#[from] toml::de::Error),
}

/// True covariate effects on the log-odds of cell occupancy, applied to
/// fixed-anchor standardized aggregates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CovariateEffects {
    pub congestion: Scalar,
    pub precipitation: Scalar,
    pub temperature: Scalar,
    pub visibility: Scalar,
    pub wind_speed: Scalar,
    pub weekend: Scalar,
}

impl Default for CovariateEffects {
    fn default() -> Self {
        CovariateEffects {
            congestion: 1.6,
            precipitation: 0.8,
            temperature: -0.3,
            visibility: -0.5,
            wind_speed: 0.2,
            weekend: -0.7,
        }
    }
}

impl CovariateEffects {
    pub fn zero() -> Self {
        CovariateEffects {
            congestion: 0.0,
            precipitation: 0.0,
            temperature: 0.0,
            visibility: 0.0,
            wind_speed: 0.0,
            weekend: 0.0,
        }
    }
}

/// Parameters of the synthetic world.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SyntheticWorldSpec {
    pub seed: u64,
    pub n_segments: usize,
    /// First month, `YYYY-MM`.
    pub start_month: String,
    pub months: u32,
    pub bbox: BoundingBox,
    #[serde(default = "default_stations")]
    pub n_stations: usize,
    /// Planted base occupancy rate of the high-frequency cluster.
    #[serde(default = "default_high_rate")]
    pub high_rate: Scalar,
    #[serde(default = "default_low_rate")]
    pub low_rate: Scalar,
    /// Fraction of segments planted in the high-frequency cluster.
    #[serde(default = "default_high_fraction")]
    pub high_fraction: Scalar,
    /// Poisson mean of the zero-inflated process's normal state.
    #[serde(default = "default_normal_mean")]
    pub normal_state_mean: Scalar,
    #[serde(default)]
    pub effects: CovariateEffects,
    /// Traffic observation spacing in minutes.
    #[serde(default = "default_traffic_minutes")]
    pub traffic_minutes: u32,
    #[serde(default = "default_weather_noise")]
    pub weather_noise: Scalar,
    #[serde(default = "default_congestion_noise")]
    pub congestion_noise: Scalar,
}

fn default_stations() -> usize {
    5
}
fn default_high_rate() -> Scalar {
    0.10
}
fn default_low_rate() -> Scalar {
    0.01
}
fn default_high_fraction() -> Scalar {
    0.3
}
fn default_normal_mean() -> Scalar {
    1.2
}
fn default_traffic_minutes() -> u32 {
    120
}
fn default_weather_noise() -> Scalar {
    2.0
}
fn default_congestion_noise() -> Scalar {
    0.04
}

impl SyntheticWorldSpec {
    pub fn load(path: &Path) -> Result<Self, SyntheticError> {
        let text = std::fs::read_to_string(path).map_err(|e| SyntheticError::Write {
            file: path.display().to_string(),
            source: e,
        })?;
        let spec: SyntheticWorldSpec = toml::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        if self.n_segments == 0 {
            return Err(SyntheticError::Invalid("n_segments must be positive".into()));
        }
        if self.months == 0 {
            return Err(SyntheticError::Invalid("months must be positive".into()));
        }
        if !self.bbox.is_valid() {
            return Err(SyntheticError::Invalid("bbox is degenerate".into()));
        }
        if self.n_stations == 0 {
            return Err(SyntheticError::Invalid("n_stations must be positive".into()));
        }
        for (name, v) in [("high_rate", self.high_rate), ("low_rate", self.low_rate)] {
            if !(v > 0.0 && v < 0.5) {
                return Err(SyntheticError::Invalid(format!(
                    "{name} must be in (0, 0.5), got {v}"
                )));
            }
        }
        if !(self.high_fraction > 0.0 && self.high_fraction < 1.0) {
            return Err(SyntheticError::Invalid("high_fraction must be in (0, 1)".into()));
        }
        if !(self.normal_state_mean > 0.0) {
            return Err(SyntheticError::Invalid("normal_state_mean must be positive".into()));
        }
        if self.traffic_minutes == 0 || self.traffic_minutes > 240 {
            return Err(SyntheticError::Invalid(
                "traffic_minutes must be in 1..=240".into(),
            ));
        }
        self.start_month()
            .map(|_| ())
            .ok_or_else(|| SyntheticError::Invalid(format!("bad start_month '{}'", self.start_month)))
    }

    pub fn start_month(&self) -> Option<Month> {
        let (y, m) = self.start_month.split_once('-')?;
        let month = Month {
            year: y.parse().ok()?,
            month: m.parse().ok()?,
        };
        (month.month >= 1 && month.month <= 12).then_some(month)
    }

    pub fn date_range(&self) -> (NaiveDate, NaiveDate) {
        let start = self.start_month().expect("validated").first_day();
        let mut end_month = self.start_month().expect("validated");
        for _ in 1..self.months {
            end_month = end_month.next();
        }
        let end = end_month.next().first_day() - chrono::Duration::days(1);
        (start, end)
    }
}

/// Fixed standardization anchors the true log-odds model applies to window
/// aggregates; recorded in the truth file.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct EffectAnchors {
    pub temperature: (Scalar, Scalar),
    pub precipitation: (Scalar, Scalar),
    pub visibility: (Scalar, Scalar),
    pub wind_speed: (Scalar, Scalar),
    pub congestion: (Scalar, Scalar),
}

pub const ANCHORS: EffectAnchors = EffectAnchors {
    temperature: (60.0, 18.0),
    precipitation: (0.05, 0.15),
    visibility: (9.0, 2.0),
    wind_speed: (7.0, 3.5),
    congestion: (0.18, 0.18),
};

/// Per-segment planted truth.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SegmentTruth {
    pub id: String,
    pub cluster: usize,
    pub base_rate: Scalar,
    /// "morning" or "evening" congestion peak.
    pub rush: String,
}

/// Ground truth written next to the generated CSVs.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct WorldTruth {
    pub seed: u64,
    pub normal_state_mean: Scalar,
    pub high_rate: Scalar,
    pub low_rate: Scalar,
    pub effects: CovariateEffects,
    pub anchors: EffectAnchors,
    pub segments: Vec<SegmentTruth>,
}

/// Everything gen_synthetic produced.
#[derive(Debug, Clone)]
pub struct GeneratedWorld {
    pub segments_csv: PathBuf,
    pub incidents_csv: PathBuf,
    pub weather_csv: PathBuf,
    pub traffic_csv: PathBuf,
    pub truth_toml: PathBuf,
    pub params_toml: PathBuf,
    pub truth: WorldTruth,
    pub n_incidents: usize,
}

struct GenSegment {
    id: String,
    polyline: Vec<(Scalar, Scalar)>,
    lanes: u32,
    miles: Scalar,
    free_flow: Scalar,
    cluster: usize,
    base_rate: Scalar,
    /// Congestion peak profile: true = morning, false = evening.
    morning_rush: bool,
    /// Multiplies the rush profile.
    intensity: Scalar,
}

fn gaussian(rng: &mut ChaCha8Rng) -> Scalar {
    let u1: Scalar = rng.random::<Scalar>().max(1e-12);
    let u2: Scalar = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn sample_poisson(rng: &mut ChaCha8Rng, lambda: Scalar) -> u32 {
    let mut k = 0u32;
    let mut p = (-lambda).exp();
    let mut cdf = p;
    let u: Scalar = rng.random();
    while u > cdf && k < 10_000 {
        k += 1;
        p *= lambda / k as Scalar;
        cdf += p;
    }
    k
}

fn sigmoid(z: Scalar) -> Scalar {
    1.0 / (1.0 + (-z).exp())
}

fn logit(p: Scalar) -> Scalar {
    (p / (1.0 - p)).ln()
}

/// Hour-of-day congestion profile: a rush bump in the morning or evening.
fn rush_profile(hour: Scalar, morning: bool) -> Scalar {
    let peak = if morning { 8.0 } else { 17.0 };
    let d = hour - peak;
    (-(d * d) / 8.0).exp()
}

fn build_segments(spec: &SyntheticWorldSpec, rng: &mut ChaCha8Rng) -> Vec<GenSegment> {
    let b = &spec.bbox;
    let n = spec.n_segments;
    let n_high = ((spec.high_fraction * n as Scalar).round() as usize).clamp(1, n - 1);
    let lat_span = b.lat_max - b.lat_min;
    let lon_span = b.lon_max - b.lon_min;
    let rows = (n as Scalar).sqrt().ceil() as usize;
    let cols = n.div_ceil(rows);
    let origins: Vec<(Scalar, Scalar)> = (0..n)
        .map(|i| {
            let r = i / cols;
            let c = i % cols;
            (
                b.lat_min + lat_span * (r as Scalar + 0.5) / rows as Scalar
                    + gaussian(rng) * lat_span * 0.01,
                b.lon_min + lon_span * (c as Scalar + 0.5) / cols as Scalar
                    + gaussian(rng) * lon_span * 0.01,
            )
        })
        .collect();
    // The high-frequency cluster concentrates around a few hotspots, the way
    // incidents pool near urban interchanges: the n_high segments closest to
    // any hotspot center are planted high.
    let n_hotspots = (n_high / 12).clamp(1, 4);
    let hotspots: Vec<(Scalar, Scalar)> = (0..n_hotspots)
        .map(|_| {
            (
                b.lat_min + lat_span * (0.2 + 0.6 * rng.random::<Scalar>()),
                b.lon_min + lon_span * (0.15 + 0.7 * rng.random::<Scalar>()),
            )
        })
        .collect();
    let mut by_hotspot_distance: Vec<usize> = (0..n).collect();
    let hot_dist = |i: usize| -> Scalar {
        hotspots
            .iter()
            .map(|&h| crate::geo::haversine_km(origins[i], h))
            .fold(Scalar::INFINITY, Scalar::min)
    };
    by_hotspot_distance
        .sort_by(|&x, &y| hot_dist(x).partial_cmp(&hot_dist(y)).unwrap().then(x.cmp(&y)));
    let mut is_high = vec![false; n];
    for &i in by_hotspot_distance.iter().take(n_high) {
        is_high[i] = true;
    }
    (0..n)
        .map(|i| {
            let (lat0, lon0) = origins[i];
            // West half rushes in the morning, east half in the evening.
            let morning_rush = lon0 < b.lon_min + lon_span / 2.0;
            let n_pts = rng.random_range(2..=4);
            let heading: Scalar = rng.random_range(0.0..std::f64::consts::TAU);
            let step = 0.012 + rng.random::<Scalar>() * 0.01;
            let mut polyline = vec![(lat0, lon0)];
            let mut dir = heading;
            for _ in 1..n_pts {
                let (plat, plon) = *polyline.last().unwrap();
                dir += gaussian(rng) * 0.35;
                polyline.push((
                    (plat + step * dir.sin()).clamp(b.lat_min, b.lat_max),
                    (plon + step * dir.cos()).clamp(b.lon_min, b.lon_max),
                ));
            }
            let miles = crate::geo::path_length_km(&polyline) * 0.621_371;
            GenSegment {
                id: format!("S{i:04}"),
                polyline,
                lanes: rng.random_range(2..=4),
                miles: miles.max(0.1),
                free_flow: 55.0 + rng.random::<Scalar>() * 15.0,
                cluster: usize::from(!is_high[i]),
                base_rate: if is_high[i] { spec.high_rate } else { spec.low_rate },
                morning_rush,
                // Narrow band: congestion must move risk within the day
                // without spreading per-segment mean rates across the
                // planted cluster gap.
                intensity: 0.6 + rng.random::<Scalar>() * 0.2,
            }
        })
        .collect()
}

fn station_positions(spec: &SyntheticWorldSpec, rng: &mut ChaCha8Rng) -> Vec<(String, (Scalar, Scalar))> {
    let b = &spec.bbox;
    (0..spec.n_stations)
        .map(|i| {
            let lat = b.lat_min + (b.lat_max - b.lat_min) * rng.random::<Scalar>();
            let lon = b.lon_min + (b.lon_max - b.lon_min) * rng.random::<Scalar>();
            (format!("W{i:02}"), (lat, lon))
        })
        .collect()
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, SyntheticError> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| SyntheticError::Write {
            file: path.display().to_string(),
            source: e,
        })
}

fn wrap_io(path: &Path, e: std::io::Error) -> SyntheticError {
    SyntheticError::Write {
        file: path.display().to_string(),
        source: e,
    }
}

/// Generate the four source CSVs, the ground-truth file, and a ready-to-run
/// params.toml into `out_dir`. Byte-identical output for a fixed spec.
pub fn gen_synthetic(spec: &SyntheticWorldSpec, out_dir: &Path) -> Result<GeneratedWorld, SyntheticError> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| wrap_io(out_dir, e))?;
    let (start_date, end_date) = spec.date_range();
    let n_days = (end_date - start_date).num_days() as u32 + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let segments = build_segments(spec, &mut rng);
    let stations = station_positions(spec, &mut rng);

    // segments.csv
    let segments_csv = out_dir.join("segments.csv");
    {
        let mut w = csv::Writer::from_writer(create(&segments_csv)?);
        w.write_record(["id", "road_name", "wkt_polyline", "lanes", "miles", "free_flow_speed"])
            .map_err(|e| wrap_io(&segments_csv, e.into()))?;
        for s in &segments {
            let wkt = format!(
                "LINESTRING ({})",
                s.polyline
                    .iter()
                    .map(|(lat, lon)| format!("{lon} {lat}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            w.write_record([
                s.id.as_str(),
                &format!("I-{}", 10 + (s.cluster * 30)),
                &wkt,
                &s.lanes.to_string(),
                &format!("{}", s.miles),
                &format!("{}", s.free_flow),
            ])
            .map_err(|e| wrap_io(&segments_csv, e.into()))?;
        }
        w.flush().map_err(|e| wrap_io(&segments_csv, e))?;
    }

    // Weather: hourly per station, with seasonal + diurnal structure and a
    // two-state rain process.
    let weather_csv = out_dir.join("weather.csv");
    let mut weather_by_station_hour: Vec<Vec<(Scalar, Scalar, Scalar, Scalar)>> =
        vec![Vec::with_capacity((n_days * 24) as usize); stations.len()];
    {
        let mut w = csv::Writer::from_writer(create(&weather_csv)?);
        w.write_record([
            "station_id",
            "lat",
            "lon",
            "timestamp",
            "temperature",
            "precipitation",
            "visibility",
            "wind_speed",
        ])
        .map_err(|e| wrap_io(&weather_csv, e.into()))?;
        for (si, (id, (lat, lon))) in stations.iter().enumerate() {
            let station_offset = gaussian(&mut rng) * 3.0;
            let mut raining = false;
            for day in 0..n_days {
                let date = start_date + chrono::Duration::days(day as i64);
                let doy = date.ordinal() as Scalar;
                for hour in 0..24u32 {
                    let t = date.and_hms_opt(hour, 0, 0).unwrap();
                    let temp = 52.0
                        + 20.0 * ((doy - 100.0) / 365.0 * std::f64::consts::TAU).sin()
                        + 9.0 * ((hour as Scalar - 9.0) / 24.0 * std::f64::consts::TAU).sin()
                        + station_offset
                        + gaussian(&mut rng) * spec.weather_noise;
                    raining = if raining {
                        rng.random::<Scalar>() >= 0.25
                    } else {
                        rng.random::<Scalar>() < 0.035
                    };
                    let precipitation = if raining {
                        0.02 + rng.random::<Scalar>() * 0.25
                    } else {
                        0.0
                    };
                    let fog = if (5..9).contains(&hour) && rng.random::<Scalar>() < 0.08 {
                        3.0 + rng.random::<Scalar>() * 4.0
                    } else {
                        0.0
                    };
                    let visibility = (10.0 - 22.0 * precipitation - fog).clamp(0.3, 10.0);
                    let wind_speed = (7.0 + gaussian(&mut rng) * 3.5).abs();
                    weather_by_station_hour[si].push((temp, precipitation, visibility, wind_speed));
                    w.write_record([
                        id.as_str(),
                        &format!("{lat}"),
                        &format!("{lon}"),
                        &t.format("%Y-%m-%dT%H:%M:%S").to_string(),
                        &format!("{temp}"),
                        &format!("{precipitation}"),
                        &format!("{visibility}"),
                        &format!("{wind_speed}"),
                    ])
                    .map_err(|e| wrap_io(&weather_csv, e.into()))?;
                }
            }
        }
        w.flush().map_err(|e| wrap_io(&weather_csv, e))?;
    }

    // Nearest station per segment, matching the ingest join.
    let seg_station: Vec<usize> = segments
        .iter()
        .map(|s| {
            let point = crate::geo::centroid(&s.polyline);
            let id = crate::ingest::nearest_station(
                point,
                stations.iter().map(|(id, p)| (id.as_str(), *p)),
            )
            .expect("stations non-empty");
            stations.iter().position(|(sid, _)| sid == id).unwrap()
        })
        .collect();

    // Traffic + per-cell congestion aggregates.
    let traffic_csv = out_dir.join("traffic.csv");
    let slots_per_day = WINDOWS_PER_DAY as u32;
    let n_slots = n_days * slots_per_day;
    let mut congestion_agg: Vec<Vec<TrafficAccumulator>> =
        vec![vec![TrafficAccumulator::default(); n_slots as usize]; segments.len()];
    {
        let mut w = csv::Writer::from_writer(create(&traffic_csv)?);
        w.write_record(["segment_id", "timestamp", "current_speed", "free_flow_speed", "confidence"])
            .map_err(|e| wrap_io(&traffic_csv, e.into()))?;
        let per_day = (24 * 60) / spec.traffic_minutes;
        for (si, s) in segments.iter().enumerate() {
            for day in 0..n_days {
                let date = start_date + chrono::Duration::days(day as i64);
                for k in 0..per_day {
                    let minute = k * spec.traffic_minutes;
                    let t = date.and_hms_opt(minute / 60, minute % 60, 0).unwrap();
                    let hour = minute as Scalar / 60.0;
                    let c = (s.intensity * rush_profile(hour, s.morning_rush)
                        + gaussian(&mut rng) * spec.congestion_noise)
                        .clamp(0.0, 0.92);
                    let current = s.free_flow * (1.0 - c);
                    let confidence = 0.75 + rng.random::<Scalar>() * 0.25;
                    let slot = day * slots_per_day + window_of(t).index as u32;
                    congestion_agg[si][slot as usize].push(s.free_flow, current, confidence);
                    w.write_record([
                        s.id.as_str(),
                        &t.format("%Y-%m-%dT%H:%M:%S").to_string(),
                        &format!("{current}"),
                        &format!("{}", s.free_flow),
                        &format!("{confidence}"),
                    ])
                    .map_err(|e| wrap_io(&traffic_csv, e.into()))?;
                }
            }
        }
        w.flush().map_err(|e| wrap_io(&traffic_csv, e))?;
    }

    // Incidents from the planted zero-inflated process.
    let incidents_csv = out_dir.join("incidents.csv");
    let exceed_cap = 1.0 - (-spec.normal_state_mean).exp();
    let mut n_incidents = 0usize;
    {
        let mut w = csv::Writer::from_writer(create(&incidents_csv)?);
        w.write_record(["id", "lat", "lon", "timestamp", "severity"])
            .map_err(|e| wrap_io(&incidents_csv, e.into()))?;
        for (si, s) in segments.iter().enumerate() {
            let base_logit = logit(s.base_rate);
            for day in 0..n_days {
                let date = start_date + chrono::Duration::days(day as i64);
                let weekend = matches!(date.weekday(), chrono::Weekday::Sat | chrono::Weekday::Sun);
                for wi in 0..slots_per_day {
                    let slot = (day * slots_per_day + wi) as usize;
                    // Window weather aggregate from the joined station.
                    let mut wacc = WeatherAccumulator::default();
                    for h in (wi * 4)..(wi * 4 + 4) {
                        let idx = (day * 24 + h) as usize;
                        let (temp, prec, vis, wind) = weather_by_station_hour[seg_station[si]][idx];
                        wacc.push(temp, prec, vis, wind);
                    }
                    let wagg = wacc.finish().expect("four readings per window");
                    let tagg = congestion_agg[si][slot]
                        .finish()
                        .expect("traffic generated for every window");
                    let e = &spec.effects;
                    let z = base_logit
                        + e.congestion * (tagg.congestion - ANCHORS.congestion.0) / ANCHORS.congestion.1
                        + e.precipitation * (wagg.precipitation - ANCHORS.precipitation.0) / ANCHORS.precipitation.1
                        + e.temperature * (wagg.temperature - ANCHORS.temperature.0) / ANCHORS.temperature.1
                        + e.visibility * (wagg.visibility - ANCHORS.visibility.0) / ANCHORS.visibility.1
                        + e.wind_speed * (wagg.wind_speed - ANCHORS.wind_speed.0) / ANCHORS.wind_speed.1
                        + e.weekend * Scalar::from(u8::from(weekend));
                    let p_cell = sigmoid(z).min(0.9 * exceed_cap);
                    let pi = 1.0 - p_cell / exceed_cap;
                    let count = if rng.random::<Scalar>() < pi {
                        0
                    } else {
                        sample_poisson(&mut rng, spec.normal_state_mean)
                    };
                    for _ in 0..count {
                        let minute = rng.random_range(0..240u32);
                        let t = date
                            .and_hms_opt(wi * 4, 0, 0)
                            .unwrap()
                            + chrono::Duration::minutes(minute as i64);
                        let (lat, lon) = point_along(&s.polyline, rng.random::<Scalar>());
                        // Jitter well inside the 25 m mapping threshold.
                        let lat = lat + gaussian(&mut rng) * 0.00003;
                        n_incidents += 1;
                        w.write_record([
                            &format!("I{n_incidents:06}"),
                            &format!("{lat}"),
                            &format!("{lon}"),
                            &t.format("%Y-%m-%dT%H:%M:%S").to_string(),
                            &rng.random_range(0..4u32).to_string(),
                        ])
                        .map_err(|e| wrap_io(&incidents_csv, e.into()))?;
                    }
                }
            }
        }
        w.flush().map_err(|e| wrap_io(&incidents_csv, e))?;
    }

    // Ground truth.
    let truth = WorldTruth {
        seed: spec.seed,
        normal_state_mean: spec.normal_state_mean,
        high_rate: spec.high_rate,
        low_rate: spec.low_rate,
        effects: spec.effects,
        anchors: ANCHORS,
        segments: segments
            .iter()
            .map(|s| SegmentTruth {
                id: s.id.clone(),
                cluster: s.cluster,
                base_rate: s.base_rate,
                rush: if s.morning_rush { "morning" } else { "evening" }.to_string(),
            })
            .collect(),
    };
    let truth_toml = out_dir.join("truth.toml");
    {
        let mut f = create(&truth_toml)?;
        let text = toml::to_string_pretty(&truth).expect("truth serializes");
        f.write_all(text.as_bytes()).map_err(|e| wrap_io(&truth_toml, e))?;
    }

    // Ready-to-run pipeline configuration pointing at the generated files.
    let params = RunConfig {
        paths: PathsSection {
            segments: segments_csv.clone(),
            incidents: incidents_csv.clone(),
            weather: weather_csv.clone(),
            traffic: traffic_csv.clone(),
            out_dir: out_dir.join("out"),
        },
        study: StudySection {
            bbox: spec.bbox,
            timezone_offset_hours: 0,
            start_date,
            end_date,
        },
        dataset: DatasetSection { keep_fraction: 1.0 / 3.0 },
        models: ModelsSection {
            kinds: vec![ModelKind::Naive, ModelKind::Logistic],
            cluster_counts: vec![1, 2],
            resampling: vec![ResampleMode::None, ResampleMode::Rus, ResampleMode::Ros],
            l2_lambda: 1e-4,
            gd_tol: 1e-8,
            gd_max_iters: 500,
            em_tol: 1e-8,
            em_max_rounds: 200,
        },
        evaluation: EvaluationSection::default(),
        allocation: AllocationSection {
            cell_size_deg: 0.1,
            p: vec![10],
            alpha: vec![0.0, 0.5, 1.0],
            models: vec!["Naive".to_string(), "LR+RUS+KM2".to_string()],
            static_models: vec!["Naive".to_string()],
        },
        dispatch: DispatchSection::default(),
        run: RunSection {
            seed: spec.seed,
            workers: 1,
        },
    };
    let params_toml = out_dir.join("params.toml");
    {
        let mut f = create(&params_toml)?;
        let text = toml::to_string_pretty(&params).expect("config serializes");
        f.write_all(text.as_bytes()).map_err(|e| wrap_io(&params_toml, e))?;
    }

    Ok(GeneratedWorld {
        segments_csv,
        incidents_csv,
        weather_csv,
        traffic_csv,
        truth_toml,
        params_toml,
        truth,
        n_incidents,
    })
}

/// Point at parameter t in [0, 1] along a polyline by arc length.
fn point_along(polyline: &[(Scalar, Scalar)], t: Scalar) -> (Scalar, Scalar) {
    let total = crate::geo::path_length_km(polyline);
    if total <= 0.0 {
        return polyline[0];
    }
    let mut remaining = t.clamp(0.0, 1.0) * total;
    for w in polyline.windows(2) {
        let piece = crate::geo::haversine_km(w[0], w[1]);
        if remaining <= piece && piece > 0.0 {
            let frac = remaining / piece;
            return (
                w[0].0 + (w[1].0 - w[0].0) * frac,
                w[0].1 + (w[1].1 - w[0].1) * frac,
            );
        }
        remaining -= piece;
    }
    *polyline.last().unwrap()
}
