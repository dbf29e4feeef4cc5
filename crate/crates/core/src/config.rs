//! Run configuration: a sectioned key = value file (TOML) naming the source
//! tables, study parameters, model grid, allocation grid, and seeds.
//!
//! Unknown keys are rejected and numeric ranges are validated at load.
//! Environment variables override paths only.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::BoundingBox;
use crate::models::ModelKind;
use crate::resample::ResampleMode;
use crate::Scalar;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {file}: {source}")]
    Read {
        file: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub segments: PathBuf,
    pub incidents: PathBuf,
    pub weather: PathBuf,
    pub traffic: PathBuf,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    pub bbox: BoundingBox,
    /// Fixed UTC offset applied to every timestamp; no DST.
    #[serde(default)]
    pub timezone_offset_hours: i32,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Fraction of segments retained by positive-cell count.
    pub keep_fraction: Scalar,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelsSection {
    /// Model kinds to run: "naive", "lr", "zip".
    pub kinds: Vec<ModelKind>,
    /// Cluster counts to run: 1 = no clustering, k > 1 = k-means.
    pub cluster_counts: Vec<usize>,
    /// Resampling modes to run: "none", "rus", "ros".
    pub resampling: Vec<ResampleMode>,
    #[serde(default = "default_l2")]
    pub l2_lambda: Scalar,
    #[serde(default = "default_gd_tol")]
    pub gd_tol: Scalar,
    #[serde(default = "default_gd_iters")]
    pub gd_max_iters: usize,
    #[serde(default = "default_em_tol")]
    pub em_tol: Scalar,
    #[serde(default = "default_em_rounds")]
    pub em_max_rounds: usize,
}

fn default_l2() -> Scalar {
    1e-4
}
fn default_gd_tol() -> Scalar {
    1e-8
}
fn default_gd_iters() -> usize {
    500
}
fn default_em_tol() -> Scalar {
    1e-8
}
fn default_em_rounds() -> usize {
    200
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    #[serde(default = "default_initial_train_months")]
    pub initial_train_months: usize,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: Scalar,
    /// When true, metrics pool all test cells; otherwise they average per
    /// rolling test window (the reported layout).
    #[serde(default)]
    pub pooled_metrics: bool,
}

fn default_initial_train_months() -> usize {
    10
}
fn default_validation_fraction() -> Scalar {
    0.2
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            initial_train_months: default_initial_train_months(),
            validation_fraction: default_validation_fraction(),
            pooled_metrics: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AllocationSection {
    #[serde(default = "default_cell_size")]
    pub cell_size_deg: Scalar,
    /// Responder counts to evaluate.
    pub p: Vec<usize>,
    /// Balance exponents to evaluate.
    pub alpha: Vec<Scalar>,
    /// Combination names from results.csv to allocate for (e.g.
    /// "LR+RUS+KM2", "Naive").
    pub models: Vec<String>,
    /// Models allocated once per fold from the historical training heatmap
    /// instead of per window.
    #[serde(default)]
    pub static_models: Vec<String>,
}

fn default_cell_size() -> Scalar {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DispatchSection {
    #[serde(default = "default_busy_minutes")]
    pub busy_minutes: i64,
    /// Defaults to twice the study bounding-box diameter.
    #[serde(default)]
    pub penalty_km: Option<Scalar>,
}

fn default_busy_minutes() -> i64 {
    60
}

impl Default for DispatchSection {
    fn default() -> Self {
        DispatchSection {
            busy_minutes: default_busy_minutes(),
            penalty_km: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Worker-pool width for per-window allocation and dispatch.
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_seed() -> u64 {
    7
}
fn default_workers() -> usize {
    1
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: default_seed(),
            workers: default_workers(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsSection,
    pub study: StudySection,
    pub dataset: DatasetSection,
    pub models: ModelsSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    pub allocation: AllocationSection,
    #[serde(default)]
    pub dispatch: DispatchSection,
    #[serde(default)]
    pub run: RunSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            file: path.display().to_string(),
            source: e,
        })?;
        let mut cfg: RunConfig = toml::from_str(&text)?;
        cfg.apply_env_overrides();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Paths may be overridden through the environment; nothing else is.
    pub fn apply_env_overrides(&mut self) {
        let over = |var: &str, slot: &mut PathBuf| {
            if let Ok(v) = std::env::var(var) {
                if !v.is_empty() {
                    *slot = PathBuf::from(v);
                }
            }
        };
        over("ROADRISK_SEGMENTS", &mut self.paths.segments);
        over("ROADRISK_INCIDENTS", &mut self.paths.incidents);
        over("ROADRISK_WEATHER", &mut self.paths.weather);
        over("ROADRISK_TRAFFIC", &mut self.paths.traffic);
        over("ROADRISK_OUT_DIR", &mut self.paths.out_dir);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError::Invalid(m));
        if !self.study.bbox.is_valid() {
            return fail("study.bbox is degenerate".into());
        }
        if self.study.start_date > self.study.end_date {
            return fail("study.start_date is after study.end_date".into());
        }
        if !(self.dataset.keep_fraction > 0.0 && self.dataset.keep_fraction <= 1.0) {
            return fail(format!(
                "dataset.keep_fraction must be in (0, 1], got {}",
                self.dataset.keep_fraction
            ));
        }
        if self.models.kinds.is_empty() {
            return fail("models.kinds must not be empty".into());
        }
        if self.models.cluster_counts.is_empty() || self.models.cluster_counts.contains(&0) {
            return fail("models.cluster_counts must be non-empty positive integers".into());
        }
        if self.models.resampling.is_empty() {
            return fail("models.resampling must not be empty".into());
        }
        if self.models.l2_lambda < 0.0 {
            return fail("models.l2_lambda must be >= 0".into());
        }
        if !(self.models.gd_tol > 0.0) || !(self.models.em_tol > 0.0) {
            return fail("optimizer tolerances must be positive".into());
        }
        if self.models.gd_max_iters == 0 || self.models.em_max_rounds == 0 {
            return fail("optimizer iteration caps must be positive".into());
        }
        if self.evaluation.initial_train_months == 0 {
            return fail("evaluation.initial_train_months must be positive".into());
        }
        if !(self.evaluation.validation_fraction > 0.0 && self.evaluation.validation_fraction < 1.0)
        {
            return fail("evaluation.validation_fraction must be in (0, 1)".into());
        }
        if !(self.allocation.cell_size_deg > 0.0) {
            return fail("allocation.cell_size_deg must be positive".into());
        }
        if self.allocation.p.is_empty() || self.allocation.p.contains(&0) {
            return fail("allocation.p must be non-empty positive integers".into());
        }
        if self.allocation.alpha.iter().any(|&a| a < 0.0) {
            return fail("allocation.alpha values must be >= 0".into());
        }
        let known: BTreeSet<&String> = self.allocation.models.iter().collect();
        for m in &self.allocation.static_models {
            if !known.contains(m) {
                return fail(format!(
                    "allocation.static_models entry '{m}' is not in allocation.models"
                ));
            }
        }
        if self.dispatch.busy_minutes <= 0 {
            return fail("dispatch.busy_minutes must be positive".into());
        }
        if let Some(p) = self.dispatch.penalty_km {
            if !(p > 0.0) {
                return fail("dispatch.penalty_km must be positive".into());
            }
        }
        if self.run.workers == 0 {
            return fail("run.workers must be at least 1".into());
        }
        Ok(())
    }

    /// The dispatch penalty: configured, or twice the study-box diameter.
    pub fn penalty_km(&self) -> Scalar {
        self.dispatch
            .penalty_km
            .unwrap_or_else(|| 2.0 * self.study.bbox.diameter_km())
    }

    /// The Table-style combination name: `{kind}+{resampling}+{clustering}`,
    /// or just `Naive` for the baseline.
    pub fn combo_name(kind: ModelKind, resampling: ResampleMode, clusters: usize) -> String {
        if kind == ModelKind::Naive {
            return "Naive".to_string();
        }
        let cluster_tag = if clusters <= 1 {
            "NoC1".to_string()
        } else {
            format!("KM{clusters}")
        };
        format!("{}+{}+{}", kind.label(), resampling.label(), cluster_tag)
    }
}
