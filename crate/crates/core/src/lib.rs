//! Forecast sparse highway-incident likelihoods, allocate responders with a
//! balanced p-median heuristic, and replay incidents through a greedy
//! dispatch simulator to quantify response-distance outcomes.
//!
//! The numeric kernels ([`geo`], [`metrics`], [`cluster`], [`models`],
//! [`allocation`]) are generic over [`scalar::Real`]; the data pipeline runs
//! at the crate-level [`Scalar`] alias.

// Negated comparisons like `!(x > 0)` are deliberate: they reject NaN along
// with out-of-range values. Indexed loops are kept where several arrays are
// walked in lockstep in the numeric kernels.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod allocation;
pub mod cluster;
pub mod config;
pub mod dispatch;
pub mod domain;
pub mod geo;
pub mod ingest;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod report;
pub mod resample;
pub mod rolling;
pub mod scalar;
pub mod synthetic;
pub mod util;

/// Concrete scalar the pipeline runs at.
pub type Scalar = f64;

pub use domain::{
    BoundingBox, CellRecord, Dataset, GridLocation, Incident, RoadSegment, SegmentId, TimeWindow,
};
pub use models::ModelParams;
pub use scalar::Real;
