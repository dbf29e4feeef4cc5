//! Greedy-dispatch replay: incidents of a window are served in time order by
//! the closest available responder, who then stays busy for a fixed period
//! and returns to base.
//!
//! Responders reset to their window's allocated bases at the window start;
//! there is no en-route reassignment and no queueing of unattended incidents.

use chrono::NaiveDateTime;
use thiserror::Error;

use crate::geo::haversine_km;
use crate::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum DispatchError {
    #[error("empty allocation: no responder bases")]
    EmptyAllocation,
    #[error("busy_minutes must be positive, got {0}")]
    BadBusyMinutes(i64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispatchConfig {
    /// Service time per dispatch; the responder is unavailable for this long
    /// from the incident time.
    pub busy_minutes: i64,
    /// Distance charged for an incident no responder can attend.
    pub penalty_km: Scalar,
}

/// One incident to replay; times are local instants.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidentEvent {
    pub id: String,
    pub time: NaiveDateTime,
    pub location: (Scalar, Scalar),
}

/// Outcome for one incident: the dispatched responder and base-to-incident
/// distance, or an unattended flag.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchRecord {
    pub incident_id: String,
    /// Index into the window's responder bases; `None` when unattended.
    pub responder: Option<usize>,
    /// Base-to-incident distance for served incidents, the penalty otherwise.
    pub distance_km: Scalar,
}

/// Time-ordered dispatch outcomes plus the window totals.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowTrace {
    pub records: Vec<DispatchRecord>,
    pub served: usize,
    pub unattended: usize,
    /// Sum of base-to-incident distances over served incidents only.
    pub served_distance_km: Scalar,
    /// Served distance plus one penalty per unattended incident.
    pub penalized_distance_km: Scalar,
}

impl WindowTrace {
    pub fn total_incidents(&self) -> usize {
        self.served + self.unattended
    }

    /// Mean distance per incident with unattended penalties included.
    pub fn mean_distance_with_penalty(&self) -> Option<Scalar> {
        let n = self.total_incidents();
        (n > 0).then(|| self.penalized_distance_km / n as Scalar)
    }

    /// Mean distance per served incident, penalties excluded.
    pub fn mean_distance_served(&self) -> Option<Scalar> {
        (self.served > 0).then(|| self.served_distance_km / self.served as Scalar)
    }
}

/// Replay one window of incidents against responder bases.
///
/// Incidents must already be sorted by time. For each one, the available
/// responder (busy-until at or before the incident time) with the smallest
/// haversine base distance is dispatched, ties to the lower responder index,
/// and becomes busy for `busy_minutes` from the incident time. If none is
/// available the incident is unattended and charged `penalty_km`.
pub fn simulate_window(
    bases: &[(Scalar, Scalar)],
    incidents: &[IncidentEvent],
    cfg: &DispatchConfig,
) -> Result<WindowTrace, DispatchError> {
    if bases.is_empty() {
        return Err(DispatchError::EmptyAllocation);
    }
    if cfg.busy_minutes <= 0 {
        return Err(DispatchError::BadBusyMinutes(cfg.busy_minutes));
    }
    debug_assert!(
        incidents.windows(2).all(|w| w[0].time <= w[1].time),
        "incidents must be time-sorted"
    );

    let mut busy_until: Vec<Option<NaiveDateTime>> = vec![None; bases.len()];
    let mut records = Vec::with_capacity(incidents.len());
    let mut served = 0usize;
    let mut unattended = 0usize;
    let mut served_distance = 0.0;
    let mut penalized_distance = 0.0;

    for inc in incidents {
        let mut choice: Option<(usize, Scalar)> = None;
        for (r, base) in bases.iter().enumerate() {
            let available = busy_until[r].is_none_or(|t| t <= inc.time);
            if !available {
                continue;
            }
            let d = haversine_km(*base, inc.location);
            let better = match choice {
                None => true,
                Some((_, best)) => d < best,
            };
            if better {
                choice = Some((r, d));
            }
        }
        match choice {
            Some((r, d)) => {
                busy_until[r] = Some(inc.time + chrono::Duration::minutes(cfg.busy_minutes));
                served += 1;
                served_distance += d;
                penalized_distance += d;
                records.push(DispatchRecord {
                    incident_id: inc.id.clone(),
                    responder: Some(r),
                    distance_km: d,
                });
            }
            None => {
                unattended += 1;
                penalized_distance += cfg.penalty_km;
                records.push(DispatchRecord {
                    incident_id: inc.id.clone(),
                    responder: None,
                    distance_km: cfg.penalty_km,
                });
            }
        }
    }

    Ok(WindowTrace {
        records,
        served,
        unattended,
        served_distance_km: served_distance,
        penalized_distance_km: penalized_distance,
    })
}

/// Degrees of latitude per kilometer along a meridian; used by tests and the
/// synthetic generator to lay out exact-kilometer geometries.
pub const DEG_PER_KM: Scalar = 180.0 / (std::f64::consts::PI * crate::geo::EARTH_RADIUS_KM);

/// One window to evaluate: per-edge demand (the model's likelihoods, or a
/// static heatmap) and the window's time-sorted incidents.
#[derive(Debug, Clone)]
pub struct WindowScenario {
    pub window: crate::domain::TimeWindow,
    pub demand: Vec<Scalar>,
    pub incidents: Vec<IncidentEvent>,
}

/// Allocation and dispatch outcome for one window.
#[derive(Debug, Clone)]
pub struct WindowOutcome {
    pub window: crate::domain::TimeWindow,
    /// Chosen grid-location indices, in placement order.
    pub chosen: Vec<usize>,
    /// Demand share covered by each chosen location (balance-term input).
    pub shares: Vec<Scalar>,
    pub trace: WindowTrace,
}

/// Distribution statistics over the per-window outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySummary {
    pub windows: usize,
    pub incidents: usize,
    pub served: usize,
    pub unattended_total: usize,
    /// Mean/max unattended per window, over all windows.
    pub unattended_mean: Scalar,
    pub unattended_max: usize,
    /// Min/median/max of the per-window mean distance per incident with
    /// unattended penalties included; windows with no incidents excluded.
    pub dist_per_incident: (Scalar, Scalar, Scalar),
    /// Same statistic over served incidents only (penalties excluded).
    pub dist_served: (Scalar, Scalar, Scalar),
}

fn min_median_max(values: &mut [Scalar]) -> (Scalar, Scalar, Scalar) {
    if values.is_empty() {
        return (Scalar::NAN, Scalar::NAN, Scalar::NAN);
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let n = values.len();
    let median = if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    };
    (values[0], median, values[n - 1])
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Allocation(#[from] crate::allocation::AllocationError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
}

/// Allocate responders for every window (Greedy-Add on its demand) and
/// replay its incidents. Windows evaluate independently across the worker
/// pool; results are merged in window order.
pub fn evaluate_policy(
    scenarios: &[WindowScenario],
    distances: &crate::allocation::DistanceTable<Scalar>,
    location_points: &[(Scalar, Scalar)],
    p: usize,
    alpha: Scalar,
    cfg: &DispatchConfig,
    workers: usize,
) -> Result<(Vec<WindowOutcome>, PolicySummary), PolicyError> {
    let results: Vec<Result<WindowOutcome, PolicyError>> =
        crate::util::bounded_map(scenarios.len(), workers, |i| {
            let sc = &scenarios[i];
            let inst = crate::allocation::AllocationInstance::new(
                sc.demand.clone(),
                distances.clone(),
                p,
                alpha,
            )?;
            let alloc = crate::allocation::greedy_add(&inst)?;
            let shares = alloc.demand_shares(&inst.likelihoods);
            let bases: Vec<(Scalar, Scalar)> =
                alloc.chosen.iter().map(|&j| location_points[j]).collect();
            let trace = simulate_window(&bases, &sc.incidents, cfg)?;
            Ok(WindowOutcome {
                window: sc.window,
                chosen: alloc.chosen,
                shares,
                trace,
            })
        });
    let mut outcomes = Vec::with_capacity(results.len());
    for r in results {
        outcomes.push(r?);
    }
    let summary = summary_of(&outcomes);
    Ok((outcomes, summary))
}

/// Aggregate per-window outcomes into the reported distribution statistics.
pub fn summary_of(outcomes: &[WindowOutcome]) -> PolicySummary {
    let mut per_incident = Vec::new();
    let mut per_served = Vec::new();
    let mut incidents = 0;
    let mut served = 0;
    let mut unattended_total = 0;
    let mut unattended_max = 0;
    for o in outcomes {
        incidents += o.trace.total_incidents();
        served += o.trace.served;
        unattended_total += o.trace.unattended;
        unattended_max = unattended_max.max(o.trace.unattended);
        if let Some(d) = o.trace.mean_distance_with_penalty() {
            per_incident.push(d);
        }
        if let Some(d) = o.trace.mean_distance_served() {
            per_served.push(d);
        }
    }
    PolicySummary {
        windows: outcomes.len(),
        incidents,
        served,
        unattended_total,
        unattended_mean: if outcomes.is_empty() {
            0.0
        } else {
            unattended_total as Scalar / outcomes.len() as Scalar
        },
        unattended_max,
        dist_per_incident: min_median_max(&mut per_incident),
        dist_served: min_median_max(&mut per_served),
    }
}
