//! Acceptance suite: one test per criterion, each printing a pass line.
//! Run with `cargo test -p roadrisk-core --test acceptance -- --nocapture`.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use chrono::{NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use roadrisk_core::allocation::{evaluate, greedy_add, AllocationInstance, DistanceTable};
use roadrisk_core::config::RunConfig;
use roadrisk_core::dispatch::{
    simulate_window, DispatchConfig, IncidentEvent, DEG_PER_KM,
};
use roadrisk_core::domain::{BoundingBox, TimeWindow};
use roadrisk_core::metrics::{confusion_metrics, pearson, spearman, ConfusionMetrics};
use roadrisk_core::models::matrix::FeatureMatrix;
use roadrisk_core::models::zip::{fit_poisson, fit_zip, zip_loglik, EmOptions};
use roadrisk_core::models::logistic::{penalized_grad, penalized_loss};
use roadrisk_core::pipeline::{run_allocation, run_forecast};
use roadrisk_core::resample::{resample_indices, ResampleMode, ResamplePlan};
use roadrisk_core::synthetic::{gen_synthetic, SyntheticWorldSpec};
use roadrisk_core::Scalar;

// ---------------------------------------------------------------------------
// Independent oracles (no shared code with the implementation paths they
// check).
// ---------------------------------------------------------------------------

/// Literal objective: assign each edge to its nearest chosen location (ties
/// to the smallest index), form per-location demand shares, and sum
/// a_i * d_ij * b_j term by term.
fn oracle_objective(
    a: &[f64],
    d: &[Vec<f64>],
    chosen: &[usize],
    alpha: f64,
) -> (f64, Vec<usize>) {
    let total: f64 = a.iter().sum();
    let mut sorted = chosen.to_vec();
    sorted.sort_unstable();
    let assign: Vec<usize> = (0..a.len())
        .map(|i| {
            let mut best = sorted[0];
            for &j in &sorted {
                if d[i][j] < d[i][best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    let mut z = 0.0;
    for i in 0..a.len() {
        let covered: f64 = (0..a.len())
            .filter(|&e| assign[e] == assign[i])
            .map(|e| a[e])
            .sum();
        z += a[i] * d[i][assign[i]] * (covered / total).powf(alpha);
    }
    (z, assign)
}

/// Classical greedy p-median: repeatedly add the location minimizing the
/// plain demand-weighted nearest distance, no balance machinery at all.
fn classical_greedy(a: &[f64], d: &[Vec<f64>], p: usize) -> (Vec<usize>, f64) {
    let n_loc = d[0].len();
    let mut chosen: Vec<usize> = Vec::new();
    let mut best_cost = 0.0;
    for _ in 0..p {
        let mut winner: Option<(f64, usize)> = None;
        for cand in 0..n_loc {
            if chosen.contains(&cand) {
                continue;
            }
            let mut cost = 0.0;
            for i in 0..a.len() {
                let mut nearest = d[i][cand];
                for &j in &chosen {
                    if d[i][j] < nearest {
                        nearest = d[i][j];
                    }
                }
                cost += a[i] * nearest;
            }
            if winner.is_none_or(|(w, _)| cost < w) {
                winner = Some((cost, cand));
            }
        }
        let (cost, pick) = winner.unwrap();
        chosen.push(pick);
        best_cost = cost;
    }
    (chosen, best_cost)
}

fn random_instance(seed: u64) -> (Vec<f64>, Vec<Vec<f64>>, usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_e = rng.random_range(2..=15);
    let p = rng.random_range(1..=3usize);
    let n_l = rng.random_range(p.max(3)..=8);
    let a: Vec<f64> = (0..n_e).map(|_| rng.random_range(0.01..1.0)).collect();
    let d: Vec<Vec<f64>> = (0..n_e)
        .map(|_| (0..n_l).map(|_| rng.random_range(0.1..20.0)).collect())
        .collect();
    let alpha = [0.0, 0.5, 1.0, 2.0][seed as usize % 4];
    (a, d, p, alpha)
}

fn instance_of(a: &[f64], d: &[Vec<f64>], p: usize, alpha: f64) -> AllocationInstance<f64> {
    AllocationInstance::new(a.to_vec(), DistanceTable::from_rows(d.to_vec()), p, alpha).unwrap()
}

#[test]
fn criterion_1_p_median_oracle() {
    let started = Instant::now();
    for seed in 0..100u64 {
        let (a, d, p, alpha) = random_instance(seed);
        let inst = instance_of(&a, &d, p, alpha);
        let alloc = greedy_add(&inst).unwrap();

        // Objective of the greedy allocation matches the brute-force
        // evaluator to 1e-9, as does a sweep of arbitrary subsets.
        let (oz, oassign) = oracle_objective(&a, &d, &alloc.chosen, alpha);
        assert!(
            (oz - alloc.objective).abs() <= 1e-9,
            "seed {seed}: objective {} vs oracle {oz}",
            alloc.objective
        );
        assert_eq!(alloc.assignment, oassign, "seed {seed}: assignment differs");
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        for _ in 0..5 {
            let k = rng.random_range(1..=p);
            let mut subset: Vec<usize> = (0..d[0].len()).collect();
            for i in (1..subset.len()).rev() {
                let j = rng.random_range(0..=i);
                subset.swap(i, j);
            }
            subset.truncate(k);
            let lib = evaluate(&inst, &subset);
            let (oz, _) = oracle_objective(&a, &d, &subset, alpha);
            assert!((oz - lib.objective).abs() <= 1e-9, "seed {seed}: subset objective");
        }

        // p = 1: greedy equals the exhaustive optimum exactly.
        if p == 1 {
            let n_l = d[0].len();
            let best = (0..n_l)
                .map(|j| (oracle_objective(&a, &d, &[j], alpha).0, j))
                .min_by(|x, y| x.partial_cmp(y).unwrap())
                .unwrap();
            assert_eq!(alloc.chosen, vec![best.1], "seed {seed}: p=1 optimum");
        }

        // alpha = 0: trajectory and objective equal the classical greedy.
        let inst0 = instance_of(&a, &d, p, 0.0);
        let alloc0 = greedy_add(&inst0).unwrap();
        let (chosen_ref, cost_ref) = classical_greedy(&a, &d, p);
        assert_eq!(alloc0.chosen, chosen_ref, "seed {seed}: alpha=0 trajectory");
        assert_eq!(alloc0.objective, cost_ref, "seed {seed}: alpha=0 objective bits");

        // Monotonicity under alpha = 0: adding responders never increases Z.
        let mut prev = f64::INFINITY;
        for q in 1..=p {
            let z = greedy_add(&instance_of(&a, &d, q, 0.0)).unwrap().objective;
            assert!(z <= prev + 1e-12, "seed {seed}: alpha=0 objective rose with p");
            prev = z;
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "criterion 1 took {elapsed:?}");
    println!("[PASS] criterion 1: p-median oracle, 100 instances in {elapsed:?}");
}

#[test]
fn criterion_2_alpha_packing() {
    let started = Instant::now();
    // Reconstructed 3x4 schematic demand grid: a heavy western column, faint
    // middle, modest far column. Locations co-located with the cells, unit
    // spacing, planar distances.
    let rows = 3usize;
    let cols = 4usize;
    let cell = |r: usize, c: usize| (r as f64, c as f64);
    let mut a = Vec::new();
    let mut pts = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            pts.push(cell(r, c));
            a.push(match c {
                0 => 0.4,
                3 => 0.1,
                _ => 0.05,
            });
        }
    }
    let d: Vec<Vec<f64>> = pts
        .iter()
        .map(|&(x1, y1)| {
            pts.iter()
                .map(|&(x2, y2)| ((x1 - x2).powi(2) + (y1 - y2).powi(2)).sqrt())
                .collect()
        })
        .collect();

    // Brute force over all C(12, 2) pairs at both exponents.
    let best_pair = |alpha: f64| -> (Vec<usize>, f64) {
        let mut best: Option<(f64, Vec<usize>)> = None;
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                let (z, assign) = oracle_objective(&a, &d, &[i, j], alpha);
                if best.as_ref().is_none_or(|(bz, _)| z < *bz) {
                    let total: f64 = a.iter().sum();
                    let max_share = [i, j]
                        .iter()
                        .map(|&fac| {
                            assign
                                .iter()
                                .zip(&a)
                                .filter(|(&y, _)| y == fac)
                                .map(|(_, &w)| w)
                                .sum::<f64>()
                                / total
                        })
                        .fold(0.0, f64::max);
                    best = Some((z, vec![i, j, 0]));
                    best.as_mut().unwrap().1[2] = (max_share * 1e9) as usize;
                }
            }
        }
        let (z, v) = best.unwrap();
        (v, z)
    };
    let (opt0, _) = best_pair(0.0);
    let (opt2, _) = best_pair(2.0);
    let set0: Vec<usize> = opt0[..2].to_vec();
    let set2: Vec<usize> = opt2[..2].to_vec();
    let share0 = opt0[2] as f64 / 1e9;
    let share2 = opt2[2] as f64 / 1e9;
    assert_ne!(set0, set2, "optimal 2-subsets should differ between alpha 0 and 2");
    assert!(
        share2 < share0,
        "alpha=2 max demand share {share2} not smaller than alpha=0 {share0}"
    );

    // The library evaluator agrees with the oracle on both optima.
    for (alpha, set) in [(0.0, &set0), (2.0, &set2)] {
        let inst = instance_of(&a, &d, 2, alpha);
        let lib = evaluate(&inst, set);
        let (oz, _) = oracle_objective(&a, &d, set, alpha);
        assert!((lib.objective - oz).abs() <= 1e-12);
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "criterion 2 took {elapsed:?}");
    println!(
        "[PASS] criterion 2: alpha packing, max share {share0:.3} (alpha 0) -> {share2:.3} (alpha 2) in {elapsed:?}"
    );
}

fn t(minute: i64) -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2020, 1, 6)
        .unwrap()
        .and_hms_opt(8, 0, 0)
        .unwrap()
        + chrono::Duration::minutes(minute)
}

fn km_point(km: Scalar) -> (Scalar, Scalar) {
    (km * DEG_PER_KM, 0.0)
}

fn inc(id: &str, minute: i64, km: Scalar) -> IncidentEvent {
    IncidentEvent {
        id: id.into(),
        time: t(minute),
        location: km_point(km),
    }
}

#[test]
fn criterion_3_dispatch_oracle() {
    let started = Instant::now();
    let cfg = DispatchConfig {
        busy_minutes: 60,
        penalty_km: 500.0,
    };

    // Hand replay 1: two responders, both dispatched.
    let trace = simulate_window(
        &[km_point(0.0), km_point(10.0)],
        &[inc("a", 0, 1.0), inc("b", 10, 2.0)],
        &cfg,
    )
    .unwrap();
    assert_eq!(trace.records[0].responder, Some(0));
    assert_eq!(trace.records[1].responder, Some(1));
    assert!((trace.records[0].distance_km - 1.0).abs() < 1e-6);
    assert!((trace.records[1].distance_km - 8.0).abs() < 1e-6);
    assert!((trace.served_distance_km - 9.0).abs() < 1e-6);
    assert!((trace.mean_distance_with_penalty().unwrap() - 4.5).abs() < 1e-6);

    // Hand replay 2: single responder, second incident 30 minutes later goes
    // unattended and is charged the penalty.
    let trace = simulate_window(&[km_point(0.0)], &[inc("a", 0, 1.0), inc("b", 30, 2.0)], &cfg).unwrap();
    assert_eq!(trace.served, 1);
    assert_eq!(trace.unattended, 1);
    assert!((trace.penalized_distance_km - 501.0).abs() < 1e-6);

    // Hand replay 3: the busy period expires exactly at the second incident,
    // so the same responder serves both.
    let trace = simulate_window(&[km_point(0.0)], &[inc("a", 0, 1.0), inc("b", 60, 2.0)], &cfg).unwrap();
    assert_eq!(trace.served, 2);
    assert_eq!(trace.records[1].responder, Some(0));
    assert!((trace.served_distance_km - 3.0).abs() < 1e-6);

    // Conservation on 1,000 fuzzed scenarios.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let n_resp = rng.random_range(1..=6);
        let bases: Vec<_> = (0..n_resp).map(|_| km_point(rng.random_range(0.0..80.0))).collect();
        let n_inc = rng.random_range(0..=40);
        let mut minutes: Vec<i64> = (0..n_inc).map(|_| rng.random_range(0..240)).collect();
        minutes.sort_unstable();
        let incidents: Vec<_> = minutes
            .iter()
            .enumerate()
            .map(|(i, &m)| inc(&format!("i{i}"), m, rng.random_range(0.0..80.0)))
            .collect();
        let cfg = DispatchConfig {
            busy_minutes: rng.random_range(1..=120),
            penalty_km: 500.0,
        };
        let trace = simulate_window(&bases, &incidents, &cfg).unwrap();
        assert_eq!(trace.served + trace.unattended, incidents.len());
        assert_eq!(trace.records.len(), incidents.len());
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "criterion 3 took {elapsed:?}");
    println!("[PASS] criterion 3: dispatch oracle + conservation on 1000 scenarios in {elapsed:?}");
}

#[test]
fn criterion_4_model_numerics() {
    let started = Instant::now();

    // Logistic gradient vs central finite differences at 20 random points.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 80;
    let dim = 4;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let y: Vec<u8> = rows.iter().map(|r| u8::from(r[0] + 0.5 * r[1] > 0.2)).collect();
    let x = FeatureMatrix::from_rows(rows);
    let l2 = 1e-4;
    let h = 1e-5;
    for _ in 0..20 {
        let intercept: f64 = rng.random_range(-1.5..1.5);
        let w: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        let (g0, g) = penalized_grad(&x, &y, intercept, &w, l2);
        let fd0 = (penalized_loss(&x, &y, intercept + h, &w, l2)
            - penalized_loss(&x, &y, intercept - h, &w, l2))
            / (2.0 * h);
        assert!(
            (g0 - fd0).abs() / fd0.abs().max(1e-12) < 1e-6,
            "intercept gradient: {g0} vs {fd0}"
        );
        for j in 0..dim {
            let mut wp = w.clone();
            wp[j] += h;
            let mut wm = w.clone();
            wm[j] -= h;
            let fd =
                (penalized_loss(&x, &y, intercept, &wp, l2) - penalized_loss(&x, &y, intercept, &wm, l2))
                    / (2.0 * h);
            assert!(
                (g[j] - fd).abs() / fd.abs().max(1e-12) < 1e-6,
                "gradient[{j}]: {} vs {fd}",
                g[j]
            );
        }
    }

    // ZIP EM monotone log-likelihood over 50 seeded fits.
    let sample_poisson = |rng: &mut ChaCha8Rng, lambda: f64| -> u32 {
        let mut k = 0u32;
        let mut p = (-lambda).exp();
        let mut cdf = p;
        let u: f64 = rng.random();
        while u > cdf && k < 1000 {
            k += 1;
            p *= lambda / k as f64;
            cdf += p;
        }
        k
    };
    let gen_zip = |seed: u64, n: usize, pi: f64| -> (FeatureMatrix<f64>, Vec<u32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = [
            0.2 + (seed % 5) as f64 * 0.1,
            0.5 - (seed % 3) as f64 * 0.2,
            -0.3,
        ];
        let mut rows = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let xi: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lambda = (b[0] + b[1] * xi[0] + b[2] * xi[1]).exp();
            let count = if rng.random::<f64>() < pi {
                0
            } else {
                sample_poisson(&mut rng, lambda)
            };
            rows.push(xi);
            y.push(count);
        }
        (FeatureMatrix::from_rows(rows), y)
    };
    for seed in 0..50u64 {
        let pi = 0.2 + 0.01 * (seed % 40) as f64;
        let (x, y) = gen_zip(seed, 600, pi);
        let (_, report) = fit_zip(&x, &y, &EmOptions::default()).unwrap();
        for w in report.loglik_trace.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-10,
                "seed {seed}: EM decreased loglik {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    // Nesting at n = 10,000 with pi = 0.6, and pi recovered within 0.05.
    let (x, y) = gen_zip(424242, 10_000, 0.6);
    let (zip, _) = fit_zip(&x, &y, &EmOptions::default()).unwrap();
    let zip_ll = zip_loglik(&x, &y, zip.pi, &zip.coef);
    let (_, poisson_ll) = fit_poisson(&x, &y).unwrap();
    assert!(
        zip_ll >= poisson_ll,
        "ZIP loglik {zip_ll} below Poisson {poisson_ll}"
    );
    assert!((zip.pi - 0.6).abs() <= 0.05, "pi estimate {}", zip.pi);

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "criterion 4 took {elapsed:?}");
    println!(
        "[PASS] criterion 4: gradient check, 50 monotone EM fits, nesting (pi_hat = {:.3}) in {elapsed:?}",
        zip.pi
    );
}

#[test]
fn criterion_5_resampling_contract() {
    let started = Instant::now();
    // Cluster A: 100 pos / 900 neg (f_A = 0.1); cluster B: 10 pos / 990 neg
    // (f_B = 0.01). Plan: f'_A = 0.5, f'_B = 0.05.
    let labels_a: Vec<u8> = std::iter::repeat_n(1u8, 100)
        .chain(std::iter::repeat_n(0u8, 900))
        .collect();
    let labels_b: Vec<u8> = std::iter::repeat_n(1u8, 10)
        .chain(std::iter::repeat_n(0u8, 990))
        .collect();
    let plan: ResamplePlan<f64> = ResamplePlan::from_fractions(ResampleMode::Rus, &[0.1, 0.01], 7);
    assert_eq!(plan.targets[0], 0.5);
    assert!((plan.targets[1] - 0.05).abs() < 1e-12);

    for mode in [ResampleMode::Rus, ResampleMode::Ros] {
        let idx_a = resample_indices(&labels_a, plan.targets[0], mode, 0, 7).unwrap();
        let idx_b = resample_indices(&labels_b, plan.targets[1], mode, 1, 8).unwrap();
        let frac = |labels: &[u8], idx: &[usize]| {
            idx.iter().filter(|&&i| labels[i] != 0).count() as f64 / idx.len() as f64
        };
        let fa = frac(&labels_a, &idx_a);
        let fb = frac(&labels_b, &idx_b);
        // Top-cluster positive fraction is exactly one half.
        assert_eq!(fa, 0.5, "{mode:?}: top cluster fraction {fa}");
        // Cross-cluster rate ratio preserved within 1/|cluster|.
        let achieved_ratio = fb / fa;
        let original_ratio = 0.01 / 0.1;
        assert!(
            (achieved_ratio - original_ratio).abs() <= 1.0 / idx_b.len() as f64 + 1e-12,
            "{mode:?}: ratio {achieved_ratio} vs {original_ratio}"
        );
        // Deterministic under a fixed seed.
        assert_eq!(idx_a, resample_indices(&labels_a, plan.targets[0], mode, 0, 7).unwrap());
        assert_eq!(idx_b, resample_indices(&labels_b, plan.targets[1], mode, 1, 8).unwrap());
    }
    let elapsed = started.elapsed();
    println!("[PASS] criterion 5: resampling contract in {elapsed:?}");
}

#[test]
fn criterion_6_metrics_oracle() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..100 {
        let n = rng.random_range(2..=60);
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.3)).collect();
        let preds: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.4)).collect();
        let m: ConfusionMetrics<f64> = confusion_metrics(&labels, &preds).unwrap();
        // Independent counting oracle.
        let (mut tp, mut fp, mut fn_, mut tn) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            match (labels[i], preds[i]) {
                (1, 1) => tp += 1.0,
                (0, 1) => fp += 1.0,
                (1, 0) => fn_ += 1.0,
                _ => tn += 1.0,
            }
        }
        let acc = (tp + tn) / n as f64;
        let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let rec = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f1 = if prec + rec > 0.0 {
            2.0 * prec * rec / (prec + rec)
        } else {
            0.0
        };
        assert!((m.accuracy - acc).abs() <= 1e-12, "case {case}");
        assert!((m.precision - prec).abs() <= 1e-12, "case {case}");
        assert!((m.recall - rec).abs() <= 1e-12, "case {case}");
        assert!((m.f1 - f1).abs() <= 1e-12, "case {case}");

        // Correlations against closed-form computational routes.
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let nf = n as f64;
        let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|a| a * a).sum();
        let denom = ((nf * sxx - sx * sx) * (nf * syy - sy * sy)).sqrt();
        if denom > 1e-9 {
            let r_oracle = (nf * sxy - sx * sy) / denom;
            let r = pearson(&x, &y).unwrap();
            assert!((r - r_oracle).abs() <= 1e-12, "case {case}: pearson {r} vs {r_oracle}");
        }
        // Spearman on distinct values equals Pearson of plain sorted ranks.
        let distinct: Vec<f64> = (0..n).map(|i| i as f64 + rng.random::<f64>() * 0.5).collect();
        let mut shuffled = distinct.clone();
        for i in (1..shuffled.len()).rev() {
            let j = rng.random_range(0..=i);
            shuffled.swap(i, j);
        }
        let rank = |v: &[f64]| -> Vec<f64> {
            let mut order: Vec<usize> = (0..v.len()).collect();
            order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
            let mut out = vec![0.0; v.len()];
            for (r, &i) in order.iter().enumerate() {
                out[i] = (r + 1) as f64;
            }
            out
        };
        let rho = spearman(&shuffled, &distinct).unwrap();
        let rho_oracle = pearson(&rank(&shuffled), &rank(&distinct)).unwrap();
        assert!((rho - rho_oracle).abs() <= 1e-12, "case {case}: spearman");
    }

    // The all-negative-prediction pathology: accuracy equals sparsity, F1 is
    // zero.
    let mut labels = vec![0u8; 2000];
    for l in labels.iter_mut().take(4) {
        *l = 1;
    }
    let preds = vec![0u8; 2000];
    let m: ConfusionMetrics<f64> = confusion_metrics(&labels, &preds).unwrap();
    assert_eq!(m.f1, 0.0);
    assert!((m.accuracy - 1996.0 / 2000.0).abs() <= 1e-12);

    let elapsed = started.elapsed();
    println!("[PASS] criterion 6: metrics oracle on 100 cases in {elapsed:?}");
}

// ---------------------------------------------------------------------------
// End-to-end desk scale.
// ---------------------------------------------------------------------------

fn desk_spec(seed: u64) -> SyntheticWorldSpec {
    SyntheticWorldSpec {
        seed,
        n_segments: 200,
        start_month: "2022-01".to_string(),
        months: 14,
        bbox: BoundingBox {
            lat_min: 35.0,
            lat_max: 36.0,
            lon_min: -87.0,
            lon_max: -85.0,
        },
        n_stations: 5,
        high_rate: 0.10,
        low_rate: 0.01,
        high_fraction: 0.3,
        normal_state_mean: 1.2,
        effects: Default::default(),
        traffic_minutes: 120,
        weather_noise: 2.0,
        congestion_noise: 0.04,
    }
}

#[test]
fn criterion_7_end_to_end_synthetic() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let spec = desk_spec(20220101);
    let world = gen_synthetic(&spec, dir.path()).unwrap();

    let mut cfg = RunConfig::load(&world.params_toml).unwrap();
    // Exactly the combinations the criterion compares.
    cfg.models.cluster_counts = vec![2];
    cfg.models.resampling = vec![roadrisk_core::resample::ResampleMode::Rus, roadrisk_core::resample::ResampleMode::Ros];
    cfg.allocation.models = vec!["Naive".to_string(), "LR+RUS+KM2".to_string()];
    cfg.allocation.static_models = vec!["Naive".to_string()];
    cfg.allocation.p = vec![10];
    cfg.allocation.alpha = vec![0.0, 0.5, 1.0];

    let fc = run_forecast(&cfg).unwrap();
    let cells = fc.filter_report.sparsity; // touchpoint; reported below
    assert_eq!(fc.folds.len(), 4, "14 months with 10 train months give 4 folds");

    // 7a: LR+KM2 with either resampling beats the naive baseline on F1 in
    // every test fold.
    let combo = |name: &str| fc.combos.iter().find(|c| c.name == name).unwrap();
    let naive = combo("Naive");
    for lr_name in ["LR+RUS+KM2", "LR+ROS+KM2"] {
        let lr = combo(lr_name);
        for (lf, nf) in lr.per_fold.iter().zip(&naive.per_fold) {
            assert!(
                lf.f1 > nf.f1,
                "7a: {lr_name} fold {} F1 {:.4} not above naive {:.4}",
                lf.fold,
                lf.f1,
                nf.f1
            );
        }
    }

    // 7b: k-means with k = 2 recovers the planted high/low partition exactly
    // on the retained segments (cluster 0 = planted high cluster).
    let truth_cluster: BTreeMap<&str, usize> = world
        .truth
        .segments
        .iter()
        .map(|s| (s.id.as_str(), s.cluster))
        .collect();
    let clusters = std::fs::read_to_string(&fc.clusters_csv).unwrap();
    let mut checked = 0;
    for line in clusters.lines().skip(1) {
        let mut parts = line.split(',');
        let seg = parts.next().unwrap();
        let cl: usize = parts.next().unwrap().parse().unwrap();
        assert_eq!(
            cl, truth_cluster[seg],
            "7b: segment {seg} assigned to cluster {cl}, planted {}",
            truth_cluster[seg]
        );
        checked += 1;
    }
    assert!(checked > 0, "clusters.csv is empty");

    // 7c/7d: allocation comparisons.
    let al = run_allocation(&cfg, &fc.predictions_csv).unwrap();
    let median = |model: &str, alpha: f64| -> f64 {
        al.rows
            .iter()
            .find(|r| r.model == model && r.p == 10 && (r.alpha - alpha).abs() < 1e-12)
            .unwrap()
            .summary
            .dist_per_incident
            .1
    };
    for alpha in [0.5, 1.0] {
        let lr = median("LR+RUS+KM2", alpha);
        let nv = median("Naive", alpha);
        assert!(
            lr < nv,
            "7c: LR median distance {lr:.3} not below static naive {nv:.3} at alpha {alpha}"
        );
    }
    let naive0 = median("Naive", 0.0);
    let best_balanced = median("Naive", 0.5).min(median("Naive", 1.0));
    assert!(
        best_balanced < naive0,
        "7d: no alpha in {{0.5, 1}} beat alpha=0 for the naive model ({best_balanced:.3} vs {naive0:.3})"
    );

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "criterion 7 took {elapsed:?}");
    println!(
        "[PASS] criterion 7: end-to-end synthetic ({} retained cells at {:.1}% sparsity, {} folds) in {elapsed:?}",
        fc.filter_report.cells_retained,
        cells * 100.0,
        fc.folds.len()
    );
}

#[test]
fn criterion_8_anti_leakage_audit() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut spec = desk_spec(808);
    spec.n_segments = 24;
    spec.months = 13;
    spec.bbox = BoundingBox {
        lat_min: 35.0,
        lat_max: 35.5,
        lon_min: -87.0,
        lon_max: -86.0,
    };
    let world = gen_synthetic(&spec, dir.path()).unwrap();
    let mut cfg = RunConfig::load(&world.params_toml).unwrap();
    cfg.evaluation.initial_train_months = 11; // two folds
    cfg.dataset.keep_fraction = 0.5;

    let fc = run_forecast(&cfg).unwrap();
    assert_eq!(fc.folds.len(), 2);

    // Structural audit: no fold's training month reaches its test month, and
    // the validation tail sits strictly inside the training range.
    for fold in &fc.folds {
        assert!(fold.train_months.iter().all(|m| *m < fold.test_month));
    }

    // Poison audit: append incidents in the final month (a month no fold
    // trains on). Every trained artifact (cluster assignments, coefficients,
    // standardization statistics, thresholds) must be byte-identical.
    let read_models = |model_dir: &Path| -> BTreeMap<String, Vec<u8>> {
        let mut out = BTreeMap::new();
        for fold_entry in std::fs::read_dir(model_dir).unwrap() {
            let fold_dir = fold_entry.unwrap().path();
            for f in std::fs::read_dir(&fold_dir).unwrap() {
                let p = f.unwrap().path();
                out.insert(
                    format!(
                        "{}/{}",
                        fold_dir.file_name().unwrap().to_string_lossy(),
                        p.file_name().unwrap().to_string_lossy()
                    ),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
        out
    };
    let baseline_models = read_models(&fc.model_dir);
    let baseline_predictions = std::fs::read(&fc.predictions_csv).unwrap();

    // Inject three incidents into the last study month on a retained
    // segment's first vertex.
    let clusters = std::fs::read_to_string(&fc.clusters_csv).unwrap();
    let retained_seg = clusters.lines().nth(1).unwrap().split(',').next().unwrap().to_string();
    let segs = roadrisk_core::ingest::sources::read_segments(&cfg.paths.segments).unwrap();
    let vertex = segs
        .iter()
        .find(|s| s.id.as_str() == retained_seg)
        .unwrap()
        .polyline[0];
    let mut incidents_text = std::fs::read_to_string(&cfg.paths.incidents).unwrap();
    for k in 0..3 {
        incidents_text.push_str(&format!(
            "POISON{k},{},{},2023-01-1{k}T09:30:00,1\n",
            vertex.0, vertex.1
        ));
    }
    std::fs::write(&cfg.paths.incidents, incidents_text).unwrap();

    let mut cfg2 = cfg.clone();
    cfg2.paths.out_dir = dir.path().join("out2");
    let fc2 = run_forecast(&cfg2).unwrap();
    let poisoned_models = read_models(&fc2.model_dir);
    assert_eq!(
        baseline_models.keys().collect::<Vec<_>>(),
        poisoned_models.keys().collect::<Vec<_>>()
    );
    for (name, bytes) in &baseline_models {
        assert_eq!(
            bytes,
            &poisoned_models[name],
            "8: trained artifact {name} changed when test-only data changed"
        );
    }
    // The poison is visible downstream: predictions for the final month
    // differ (labels and lag features moved), proving the sensitivity sits
    // entirely on the evaluation side.
    let poisoned_predictions = std::fs::read(&fc2.predictions_csv).unwrap();
    assert_ne!(baseline_predictions, poisoned_predictions);

    // Lag horizons end at the window start: an incident placed exactly at a
    // window start is excluded from that window's own lag features.
    let w = TimeWindow {
        date: NaiveDate::from_ymd_opt(2022, 7, 15).unwrap(),
        index: 2,
    };
    let lags = roadrisk_core::ingest::lag_features(&[w.start()], &w);
    assert_eq!(lags, [0, 0, 0, 0]);
    let lags = roadrisk_core::ingest::lag_features(&[w.start() - chrono::Duration::seconds(1)], &w);
    assert_eq!(lags, [1, 1, 1, 1]);

    let elapsed = started.elapsed();
    println!("[PASS] criterion 8: anti-leakage audit (structural + poison) in {elapsed:?}");
}
