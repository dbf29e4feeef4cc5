//! Cross-module invariants that pair the solver, the simulator, and the
//! synthetic generator.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use roadrisk_core::allocation::{greedy_add, AllocationInstance, DistanceTable};
use roadrisk_core::cluster::fit_kmeans;
use roadrisk_core::dispatch::{simulate_window, DispatchConfig, IncidentEvent, DEG_PER_KM};
use roadrisk_core::synthetic::{gen_synthetic, CovariateEffects, SyntheticWorldSpec};
use roadrisk_core::{BoundingBox, Scalar, SegmentId};

fn km_point(km: Scalar) -> (Scalar, Scalar) {
    (km * DEG_PER_KM, 0.0)
}

/// More responders never leave more incidents unattended, with demand and
/// incidents held fixed and allocations re-solved per p by Greedy-Add.
#[test]
fn unattended_monotone_in_p_on_seeded_scenarios() {
    let base_date = NaiveDate::from_ymd_opt(2020, 1, 6).unwrap();
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Edges on a km line with random demand; locations on a lattice.
        let n_e = rng.random_range(4..=12);
        let edge_km: Vec<Scalar> = (0..n_e).map(|_| rng.random_range(0.0..60.0)).collect();
        let loc_km: Vec<Scalar> = (0..10).map(|i| i as Scalar * 6.0 + 3.0).collect();
        let demand: Vec<Scalar> = (0..n_e).map(|_| rng.random_range(0.01..1.0)).collect();
        let d = DistanceTable::from_rows(
            edge_km
                .iter()
                .map(|&e| loc_km.iter().map(|&l| (e - l).abs()).collect())
                .collect(),
        );
        let mut minutes: Vec<i64> = (0..rng.random_range(3..25)).map(|_| rng.random_range(0..240)).collect();
        minutes.sort_unstable();
        let incidents: Vec<IncidentEvent> = minutes
            .iter()
            .enumerate()
            .map(|(i, &m)| IncidentEvent {
                id: format!("i{i}"),
                time: base_date.and_hms_opt(8, 0, 0).unwrap() + chrono::Duration::minutes(m),
                location: km_point(edge_km[i % n_e] + rng.random_range(-1.0..1.0)),
            })
            .collect();
        let cfg = DispatchConfig {
            busy_minutes: rng.random_range(20..=90),
            penalty_km: 1000.0,
        };
        let alpha = [0.0, 0.5, 1.0][seed as usize % 3];
        let mut prev_unattended = usize::MAX;
        for p in 1..=5usize {
            let inst =
                AllocationInstance::new(demand.clone(), d.clone(), p, alpha).unwrap();
            let alloc = greedy_add(&inst).unwrap();
            let bases: Vec<(Scalar, Scalar)> =
                alloc.chosen.iter().map(|&j| km_point(loc_km[j])).collect();
            let trace = simulate_window(&bases, &incidents, &cfg).unwrap();
            assert!(
                trace.unattended <= prev_unattended,
                "seed {seed}: unattended rose from {prev_unattended} to {} at p={p}",
                trace.unattended
            );
            prev_unattended = trace.unattended;
        }
    }
}

/// Generate-then-cluster oracle at the planted rates 0.002 / 0.05: k-means
/// with k = 2 on realized per-segment occupancy rates recovers the planted
/// partition exactly.
#[test]
fn planted_sparse_rates_recovered_by_kmeans() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticWorldSpec {
        seed: 60422,
        n_segments: 80,
        start_month: "2022-01".to_string(),
        months: 8,
        bbox: BoundingBox {
            lat_min: 35.0,
            lat_max: 35.6,
            lon_min: -87.0,
            lon_max: -85.8,
        },
        n_stations: 3,
        high_rate: 0.05,
        low_rate: 0.002,
        high_fraction: 0.3,
        normal_state_mean: 1.2,
        effects: CovariateEffects::default(),
        traffic_minutes: 120,
        weather_noise: 2.0,
        congestion_noise: 0.04,
    };
    let world = gen_synthetic(&spec, dir.path()).unwrap();
    let sources = roadrisk_core::ingest::SourceTables::load(
        &world.segments_csv,
        &world.incidents_csv,
        &world.weather_csv,
        &world.traffic_csv,
    )
    .unwrap();
    let (start, end) = spec.date_range();
    let out = roadrisk_core::ingest::build_dataset(
        &sources,
        &roadrisk_core::ingest::IngestConfig {
            timezone_offset_hours: 0,
            study_start: start,
            study_end: end,
        },
    )
    .unwrap();

    let mut acc: BTreeMap<SegmentId, (u32, u32)> = BTreeMap::new();
    for rec in &out.dataset.records {
        let e = acc.entry(rec.segment_id.clone()).or_insert((0, 0));
        e.0 += rec.label() as u32;
        e.1 += 1;
    }
    let rates: BTreeMap<SegmentId, Scalar> = acc
        .into_iter()
        .map(|(id, (pos, total))| (id, pos as Scalar / total as Scalar))
        .collect();
    let model = fit_kmeans(&rates, 2, 99).unwrap();
    for truth in &world.truth.segments {
        let got = model.cluster_of(&SegmentId(truth.id.clone())).unwrap();
        assert_eq!(
            got, truth.cluster,
            "segment {} clustered {got}, planted {}",
            truth.id, truth.cluster
        );
    }
}
