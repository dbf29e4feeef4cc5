//! Incident-likelihood forecasters: the naive empirical baseline, logistic
//! regression, and zero-inflated Poisson, behind one fit/predict/classify
//! surface with grid-searched classification thresholds.

pub mod linalg;
pub mod logistic;
pub mod matrix;
pub mod naive;
pub mod store;
pub mod zip;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::CellRecord;
use crate::scalar::Real;
use crate::Scalar;

pub use logistic::{fit_logistic, GdOptions, LogisticModel};
pub use matrix::{FeatureMatrix, Standardizer};
pub use naive::NaiveModel;
pub use zip::{fit_poisson, fit_zip, EmOptions, ZipModel};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training data contains a single class ({positives} positives of {total})")]
    SingleClass { positives: usize, total: usize },
    #[error("optimizer diverged (non-finite objective) at iteration {iteration}")]
    Divergence { iteration: usize },
    #[error("feature schema mismatch: model has {expected} features, record has {got}")]
    SchemaMismatch { expected: usize, got: usize },
    #[error("unknown model kind '{0}'")]
    UnknownKind(String),
    #[error("model file format error: {0}")]
    Format(String),
    #[error("model io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Naive,
    #[serde(alias = "lr")]
    Logistic,
    Zip,
}

impl ModelKind {
    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::Naive => "Naive",
            ModelKind::Logistic => "LR",
            ModelKind::Zip => "ZIP",
        }
    }

    pub fn parse(s: &str) -> Result<Self, ModelError> {
        match s.to_ascii_lowercase().as_str() {
            "naive" => Ok(ModelKind::Naive),
            "lr" | "logistic" => Ok(ModelKind::Logistic),
            "zip" => Ok(ModelKind::Zip),
            other => Err(ModelError::UnknownKind(other.to_owned())),
        }
    }
}

/// Fitting hyper-parameters shared across kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub l2_lambda: Scalar,
    pub gd_tol: Scalar,
    pub gd_max_iters: usize,
    pub em_tol: Scalar,
    pub em_max_rounds: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            l2_lambda: 1e-4,
            gd_tol: 1e-8,
            gd_max_iters: 500,
            em_tol: 1e-8,
            em_max_rounds: 200,
        }
    }
}

/// Kind-specific fitted parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedInner {
    Naive(NaiveModel<Scalar>),
    Logistic(LogisticModel<Scalar>),
    Zip(ZipModel<Scalar>),
}

/// A trained predictor: fitted parameters, the training-fold standardization
/// statistics, the feature schema, and the tuned classification threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub feature_names: Vec<String>,
    pub standardizer: Standardizer<Scalar>,
    /// Classification threshold, strictly inside (0, 1).
    pub threshold: Scalar,
    pub inner: FittedInner,
}

/// The parameter record the spec calls theta.
pub type ModelParams = TrainedModel;

/// Fit one model kind on training records. `_seed` is reserved for stochastic
/// model kinds plugged in through [`FittedInner`]; the three built-ins are
/// deterministic. The threshold starts at 0.5 until tuned.
pub fn fit(
    kind: ModelKind,
    records: &[CellRecord],
    feature_names: &[String],
    hp: &Hyperparams,
    _seed: u64,
) -> Result<TrainedModel, ModelError> {
    let inner = match kind {
        ModelKind::Naive => FittedInner::Naive(NaiveModel::fit(records)),
        ModelKind::Logistic => {
            let mut x = FeatureMatrix::from_records(records);
            let st = Standardizer::fit(&x);
            st.transform_in_place(&mut x);
            let y: Vec<u8> = records.iter().map(|r| r.label()).collect();
            let opts = GdOptions {
                l2: hp.l2_lambda,
                tol: hp.gd_tol,
                max_iters: hp.gd_max_iters,
            };
            let (model, _) = fit_logistic(&x, &y, &opts)?;
            return Ok(TrainedModel {
                kind,
                feature_names: feature_names.to_vec(),
                standardizer: st,
                threshold: 0.5,
                inner: FittedInner::Logistic(model),
            });
        }
        ModelKind::Zip => {
            let mut x = FeatureMatrix::from_records(records);
            let st = Standardizer::fit(&x);
            st.transform_in_place(&mut x);
            let y: Vec<u32> = records.iter().map(|r| r.incident_count).collect();
            let opts = EmOptions {
                tol: hp.em_tol,
                max_rounds: hp.em_max_rounds,
            };
            let (model, _) = fit_zip(&x, &y, &opts)?;
            return Ok(TrainedModel {
                kind,
                feature_names: feature_names.to_vec(),
                standardizer: st,
                threshold: 0.5,
                inner: FittedInner::Zip(model),
            });
        }
    };
    Ok(TrainedModel {
        kind,
        feature_names: feature_names.to_vec(),
        standardizer: Standardizer::identity(feature_names.len()),
        threshold: 0.5,
        inner,
    })
}

/// Incident likelihood for one record, in [0, 1].
pub fn predict_proba(model: &TrainedModel, record: &CellRecord) -> Result<Scalar, ModelError> {
    if record.features.len() != model.feature_names.len() {
        return Err(ModelError::SchemaMismatch {
            expected: model.feature_names.len(),
            got: record.features.len(),
        });
    }
    let p = match &model.inner {
        FittedInner::Naive(m) => m.proba(&record.segment_id, &record.window),
        FittedInner::Logistic(m) => m.proba(&model.standardizer.transform_row(&record.features)),
        FittedInner::Zip(m) => m.proba(&model.standardizer.transform_row(&record.features)),
    };
    Ok(p.clamp(0.0, 1.0))
}

/// Binary classification: 1 iff the predicted likelihood reaches the
/// threshold.
pub fn classify(model: &TrainedModel, record: &CellRecord) -> Result<u8, ModelError> {
    Ok((predict_proba(model, record)? >= model.threshold) as u8)
}

/// Outcome of threshold tuning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdChoice<T> {
    pub threshold: T,
    /// True when the validation set had one class and the 0.5 default was
    /// used instead of the grid search.
    pub single_class: bool,
    pub f1: T,
}

/// Grid-search tau over {0.01, 0.02, ..., 0.99} maximizing F1 on validation
/// scores; ties break toward the smaller tau. A single-class validation set
/// yields tau = 0.5 with a warning flag.
pub fn tune_threshold_grid<T: Real>(scores: &[T], labels: &[u8]) -> ThresholdChoice<T> {
    let positives = labels.iter().filter(|&&v| v != 0).count();
    if positives == 0 || positives == labels.len() {
        return ThresholdChoice {
            threshold: T::of(0.5),
            single_class: true,
            f1: T::zero(),
        };
    }
    let mut best_tau = T::of(0.01);
    let mut best_f1 = T::neg_infinity();
    for i in 1..=99u32 {
        let tau = T::of(i as f64 / 100.0);
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (&s, &y) in scores.iter().zip(labels) {
            let pred = s >= tau;
            match (y != 0, pred) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                _ => {}
            }
        }
        let f1 = if 2 * tp + fp + fn_ == 0 {
            T::zero()
        } else {
            T::of_usize(2 * tp) / T::of_usize(2 * tp + fp + fn_)
        };
        if f1 > best_f1 {
            best_f1 = f1;
            best_tau = tau;
        }
    }
    ThresholdChoice {
        threshold: best_tau,
        single_class: false,
        f1: best_f1,
    }
}

/// Predict over the validation records and install the grid-tuned threshold
/// on the model.
pub fn tune_threshold(
    model: &mut TrainedModel,
    validation: &[CellRecord],
) -> Result<ThresholdChoice<Scalar>, ModelError> {
    let mut scores = Vec::with_capacity(validation.len());
    let mut labels = Vec::with_capacity(validation.len());
    for rec in validation {
        scores.push(predict_proba(model, rec)?);
        labels.push(rec.label());
    }
    let choice = tune_threshold_grid(&scores, &labels);
    model.threshold = choice.threshold;
    Ok(choice)
}
