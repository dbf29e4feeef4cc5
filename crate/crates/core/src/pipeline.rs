//! End-to-end orchestration: ingest -> filter -> cluster -> resample -> fit
//! -> tune -> metrics (run_forecast), then per-window allocation and
//! dispatch replay (run_allocation).
//!
//! Output files are written in a fixed order with explicit formatting, so a
//! config and seed pin the bytes regardless of worker count.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::allocation::DistanceTable;
use crate::cluster::{fit_kmeans, ClusterModel};
use crate::config::{ConfigError, RunConfig};
use crate::dispatch::{
    evaluate_policy, DispatchConfig, IncidentEvent, PolicySummary, WindowOutcome, WindowScenario,
};
use crate::domain::{CellRecord, Dataset, SegmentId, TimeWindow};
use crate::ingest::{self, FilterReport, IngestError, SourceTables};
use crate::metrics::{self, MetricsError};
use crate::models::store::{write_bundle, ModelBundle};
use crate::models::{self, Hyperparams, ModelError, ModelKind, TrainedModel};
use crate::resample::{resample_records, ResampleMode, ResamplePlan};
use crate::rolling::{months_of, rolling_folds, split_validation, Fold, Month, RollingError};
use crate::util::mix_seed_str;
use crate::Scalar;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Rolling(#[from] RollingError),
    #[error("clustering failed in fold {fold}: {source}")]
    Cluster {
        fold: usize,
        source: crate::cluster::ClusterError,
    },
    #[error("resampling failed in fold {fold} for {combo}: {source}")]
    Resample {
        fold: usize,
        combo: String,
        source: crate::resample::ResampleError,
    },
    #[error("model fit failed in fold {fold} for {combo} cluster {cluster}: {source}")]
    Fit {
        fold: usize,
        combo: String,
        cluster: usize,
        source: ModelError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Policy(#[from] crate::dispatch::PolicyError),
    #[error(transparent)]
    Synthetic(#[from] crate::synthetic::SyntheticError),
    #[error("missing data: {0}")]
    MissingData(String),
    #[error("io error on {file}: {source}")]
    Io {
        file: String,
        source: std::io::Error,
    },
}

impl PipelineError {
    /// CLI exit code: 2 for configuration problems, 3 for data problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Ingest(_) | PipelineError::MissingData(_) | PipelineError::Synthetic(_) => 3,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        file: path.display().to_string(),
        source,
    }
}

/// Per-fold evaluation metrics for one combination.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldMetrics {
    pub fold: usize,
    pub accuracy: Scalar,
    pub precision: Scalar,
    pub recall: Scalar,
    pub f1: Scalar,
    pub pearson: Option<Scalar>,
    pub spearman: Option<Scalar>,
}

/// One results.csv row: metrics averaged across folds (or pooled).
#[derive(Debug, Clone, PartialEq)]
pub struct ComboSummary {
    pub kind: ModelKind,
    pub clusters: usize,
    pub resampling: ResampleMode,
    pub name: String,
    pub per_fold: Vec<FoldMetrics>,
    pub accuracy: Scalar,
    pub precision: Scalar,
    pub recall: Scalar,
    pub f1: Scalar,
    pub pearson: Scalar,
    pub spearman: Scalar,
}

/// Everything run_forecast wrote and measured.
#[derive(Debug)]
pub struct ForecastOutputs {
    pub cells_csv: PathBuf,
    pub results_csv: PathBuf,
    pub predictions_csv: PathBuf,
    pub clusters_csv: PathBuf,
    pub heatmap_csv: PathBuf,
    pub model_dir: PathBuf,
    pub dataset_report: ingest::DatasetReport,
    pub filter_report: FilterReport,
    pub folds: Vec<Fold>,
    pub combos: Vec<ComboSummary>,
    pub warnings: Vec<String>,
}

struct FoldSplit {
    fold: Fold,
    fit_idx: Vec<usize>,
    val_idx: Vec<usize>,
    test_idx: Vec<usize>,
}

fn month_set(months: &[Month]) -> BTreeSet<Month> {
    months.iter().copied().collect()
}

fn split_fold(records: &[CellRecord], fold: &Fold, validation_fraction: Scalar) -> FoldSplit {
    let train_months = month_set(&fold.train_months);
    let mut train_windows: BTreeSet<TimeWindow> = BTreeSet::new();
    for r in records {
        if train_months.contains(&Month::of(r.window.date)) {
            train_windows.insert(r.window);
        }
    }
    let (fit_windows, val_windows) = split_validation(&train_windows, validation_fraction);
    let mut fit_idx = Vec::new();
    let mut val_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let m = Month::of(r.window.date);
        if m == fold.test_month {
            test_idx.push(i);
        } else if train_months.contains(&m) {
            if val_windows.contains(&r.window) {
                val_idx.push(i);
            } else if fit_windows.contains(&r.window) {
                fit_idx.push(i);
            }
        }
    }
    FoldSplit {
        fold: fold.clone(),
        fit_idx,
        val_idx,
        test_idx,
    }
}

/// Fraction of fit windows with at least one incident, per segment.
fn segment_rates(records: &[CellRecord], idx: &[usize]) -> BTreeMap<SegmentId, Scalar> {
    let mut acc: BTreeMap<SegmentId, (u32, u32)> = BTreeMap::new();
    for &i in idx {
        let r = &records[i];
        let e = acc.entry(r.segment_id.clone()).or_insert((0, 0));
        e.0 += r.label() as u32;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(id, (pos, total))| (id, pos as Scalar / total.max(1) as Scalar))
        .collect()
}

fn combo_grid(cfg: &RunConfig) -> Vec<(ModelKind, usize, ResampleMode)> {
    let mut out = Vec::new();
    for &kind in &cfg.models.kinds {
        if kind == ModelKind::Naive {
            out.push((kind, 1, ResampleMode::None));
            continue;
        }
        for &k in &cfg.models.cluster_counts {
            for &mode in &cfg.models.resampling {
                out.push((kind, k, mode));
            }
        }
    }
    out
}

struct FittedCombo {
    name: String,
    bundle: ModelBundle,
}

/// Everything shared by the combination fits of one fold.
struct FoldContext<'a> {
    cfg: &'a RunConfig,
    records: &'a [CellRecord],
    feature_names: &'a [String],
    split: &'a FoldSplit,
    rates: &'a BTreeMap<SegmentId, Scalar>,
}

fn fit_combo(
    ctx: &FoldContext<'_>,
    kind: ModelKind,
    clusters: usize,
    mode: ResampleMode,
    warnings: &mut Vec<String>,
) -> Result<FittedCombo, PipelineError> {
    let FoldContext {
        cfg,
        records,
        feature_names,
        split,
        rates,
    } = *ctx;
    let name = RunConfig::combo_name(kind, mode, clusters);
    let fold = split.fold.index;
    let hp = Hyperparams {
        l2_lambda: cfg.models.l2_lambda,
        gd_tol: cfg.models.gd_tol,
        gd_max_iters: cfg.models.gd_max_iters,
        em_tol: cfg.models.em_tol,
        em_max_rounds: cfg.models.em_max_rounds,
    };

    let cluster_model: Option<ClusterModel<Scalar>> = if clusters > 1 {
        let seed = mix_seed_str(cfg.run.seed, &format!("kmeans/f{fold}/k{clusters}"));
        Some(
            fit_kmeans(rates, clusters, seed)
                .map_err(|source| PipelineError::Cluster { fold, source })?,
        )
    } else {
        None
    };
    let cluster_of = |seg: &SegmentId| -> usize {
        cluster_model
            .as_ref()
            .and_then(|c| c.cluster_of(seg))
            .unwrap_or(0)
    };

    // Per-cluster fit records and original positive fractions.
    let n_members = clusters.max(1);
    let mut member_fit: Vec<Vec<CellRecord>> = vec![Vec::new(); n_members];
    for &i in &split.fit_idx {
        let r = &records[i];
        member_fit[cluster_of(&r.segment_id)].push(r.clone());
    }
    let fractions: Vec<Scalar> = member_fit
        .iter()
        .map(|cells| {
            let pos = cells.iter().filter(|r| r.label() == 1).count();
            pos as Scalar / cells.len().max(1) as Scalar
        })
        .collect();
    let plan = ResamplePlan::from_fractions(mode, &fractions, cfg.run.seed);

    let mut members: Vec<TrainedModel> = Vec::with_capacity(n_members);
    for (c, cells) in member_fit.iter().enumerate() {
        let seed = mix_seed_str(cfg.run.seed, &format!("resample/f{fold}/{name}/c{c}"));
        let train = if mode == ResampleMode::None {
            cells.clone()
        } else {
            resample_records(cells, plan.targets[c], mode, c, seed).map_err(|source| {
                PipelineError::Resample {
                    fold,
                    combo: name.clone(),
                    source,
                }
            })?
        };
        let fit_seed = mix_seed_str(cfg.run.seed, &format!("fit/f{fold}/{name}/c{c}"));
        let mut model =
            models::fit(kind, &train, feature_names, &hp, fit_seed).map_err(|source| {
                PipelineError::Fit {
                    fold,
                    combo: name.clone(),
                    cluster: c,
                    source,
                }
            })?;
        // Thresholds tune on the untouched validation slice of this cluster.
        let val_cells: Vec<CellRecord> = split
            .val_idx
            .iter()
            .map(|&i| records[i].clone())
            .filter(|r| cluster_of(&r.segment_id) == c)
            .collect();
        let choice = models::tune_threshold(&mut model, &val_cells)?;
        if choice.single_class {
            warnings.push(format!(
                "fold {fold} {name} cluster {c}: single-class validation set, threshold defaulted to 0.5"
            ));
        }
        members.push(model);
    }

    Ok(FittedCombo {
        name: name.clone(),
        bundle: ModelBundle {
            name,
            kind,
            cluster: cluster_model,
            members,
        },
    })
}

fn mean(values: impl Iterator<Item = Scalar>) -> Scalar {
    let v: Vec<Scalar> = values.collect();
    if v.is_empty() {
        Scalar::NAN
    } else {
        v.iter().sum::<Scalar>() / v.len() as Scalar
    }
}

/// Execute the full forecasting pipeline for every configured combination.
pub fn run_forecast(cfg: &RunConfig) -> Result<ForecastOutputs, PipelineError> {
    cfg.validate()?;
    let out_dir = &cfg.paths.out_dir;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let sources = SourceTables::load(
        &cfg.paths.segments,
        &cfg.paths.incidents,
        &cfg.paths.weather,
        &cfg.paths.traffic,
    )?;
    let built = ingest::build_dataset(
        &sources,
        &ingest::IngestConfig {
            timezone_offset_hours: cfg.study.timezone_offset_hours,
            study_start: cfg.study.start_date,
            study_end: cfg.study.end_date,
        },
    )?;

    let months = months_of(&built.dataset.records);
    let folds = rolling_folds(&months, cfg.evaluation.initial_train_months)?;
    // Segment retention counts only cells before the first test month, so no
    // fold's test data influences the filter.
    let first_test = folds[0].test_month.first_day().and_hms_opt(0, 0, 0).unwrap();
    let (dataset, filter_report) =
        ingest::filter_segments(&built.dataset, cfg.dataset.keep_fraction, Some(first_test))?;

    let cells_csv = out_dir.join("cells.csv");
    write_cells_csv(&cells_csv, &dataset)?;

    let model_dir = out_dir.join("models");
    std::fs::create_dir_all(&model_dir).map_err(io_err(&model_dir))?;

    let combos = combo_grid(cfg);
    let mut warnings = Vec::new();

    // Collected outputs, indexed per combo.
    let mut per_combo_folds: Vec<Vec<FoldMetrics>> = vec![Vec::new(); combos.len()];
    let mut pooled_cells: Vec<Vec<(u8, u8)>> = vec![Vec::new(); combos.len()];
    let mut pooled_records: Vec<Vec<(usize, Scalar)>> = vec![Vec::new(); combos.len()];
    let mut prediction_rows: Vec<PredictionRow> = Vec::new();
    let mut heatmap_rows: Vec<(usize, SegmentId, Scalar)> = Vec::new();
    let mut last_cluster_model: Option<ClusterModel<Scalar>> = None;
    let mut last_rates: BTreeMap<SegmentId, Scalar> = BTreeMap::new();

    for fold in &folds {
        let split = split_fold(&dataset.records, fold, cfg.evaluation.validation_fraction);
        let rates = segment_rates(&dataset.records, &split.fit_idx);
        for (seg, rate) in &rates {
            heatmap_rows.push((fold.index, seg.clone(), *rate));
        }
        let fold_dir = model_dir.join(format!("fold{}", fold.index));
        std::fs::create_dir_all(&fold_dir).map_err(io_err(&fold_dir))?;

        let ctx = FoldContext {
            cfg,
            records: &dataset.records,
            feature_names: &dataset.feature_names,
            split: &split,
            rates: &rates,
        };
        for (ci, &(kind, clusters, mode)) in combos.iter().enumerate() {
            let fitted = fit_combo(&ctx, kind, clusters, mode, &mut warnings)?;
            let model_path = fold_dir.join(format!("{}.model", fitted.name));
            let mut f = std::fs::File::create(&model_path)
                .map(std::io::BufWriter::new)
                .map_err(io_err(&model_path))?;
            write_bundle(&fitted.bundle, &mut f).map_err(io_err(&model_path))?;

            if clusters > 1 {
                last_cluster_model = fitted.bundle.cluster.clone();
                last_rates = rates.clone();
            }

            // Test predictions and fold metrics.
            let mut labels = Vec::with_capacity(split.test_idx.len());
            let mut preds = Vec::with_capacity(split.test_idx.len());
            let mut probas = Vec::with_capacity(split.test_idx.len());
            let mut test_records = Vec::with_capacity(split.test_idx.len());
            for &i in &split.test_idx {
                let rec = &dataset.records[i];
                let proba = fitted.bundle.predict_proba(rec)?;
                let member = fitted.bundle.member_for(&rec.segment_id);
                let pred = u8::from(proba >= member.threshold);
                labels.push(rec.label());
                preds.push(pred);
                probas.push(proba);
                test_records.push(rec.clone());
                prediction_rows.push(PredictionRow {
                    model: fitted.name.clone(),
                    fold: fold.index,
                    segment_id: rec.segment_id.clone(),
                    window: rec.window,
                    probability: proba,
                    label: rec.label(),
                });
                pooled_cells[ci].push((rec.label(), pred));
                pooled_records[ci].push((i, proba));
            }
            let cm: metrics::ConfusionMetrics<Scalar> = metrics::confusion_metrics(&labels, &preds)?;
            let marg = metrics::spatial_marginals(&test_records, &probas)?;
            let obs: Vec<Scalar> = marg.iter().map(|m| m.observed_rate).collect();
            let predm: Vec<Scalar> = marg.iter().map(|m| m.predicted_mean).collect();
            let pearson = metrics::pearson(&obs, &predm).ok();
            let spearman = metrics::spearman(&obs, &predm).ok();
            if pearson.is_none() {
                warnings.push(format!(
                    "fold {} {}: spatial marginal correlation undefined (constant input)",
                    fold.index, fitted.name
                ));
            }
            per_combo_folds[ci].push(FoldMetrics {
                fold: fold.index,
                accuracy: cm.accuracy,
                precision: cm.precision,
                recall: cm.recall,
                f1: cm.f1,
                pearson,
                spearman,
            });
        }
    }

    // Aggregate: per-fold means (reported layout) or pooled cells.
    let mut summaries = Vec::with_capacity(combos.len());
    for (ci, &(kind, clusters, mode)) in combos.iter().enumerate() {
        let name = RunConfig::combo_name(kind, mode, clusters);
        let fm = &per_combo_folds[ci];
        let (accuracy, precision, recall, f1, pearson, spearman) = if cfg.evaluation.pooled_metrics
        {
            let labels: Vec<u8> = pooled_cells[ci].iter().map(|&(l, _)| l).collect();
            let preds: Vec<u8> = pooled_cells[ci].iter().map(|&(_, p)| p).collect();
            let cm: metrics::ConfusionMetrics<Scalar> = metrics::confusion_metrics(&labels, &preds)?;
            let recs: Vec<CellRecord> = pooled_records[ci]
                .iter()
                .map(|&(i, _)| dataset.records[i].clone())
                .collect();
            let probas: Vec<Scalar> = pooled_records[ci].iter().map(|&(_, p)| p).collect();
            let marg = metrics::spatial_marginals(&recs, &probas)?;
            let obs: Vec<Scalar> = marg.iter().map(|m| m.observed_rate).collect();
            let predm: Vec<Scalar> = marg.iter().map(|m| m.predicted_mean).collect();
            (
                cm.accuracy,
                cm.precision,
                cm.recall,
                cm.f1,
                metrics::pearson(&obs, &predm).unwrap_or(Scalar::NAN),
                metrics::spearman(&obs, &predm).unwrap_or(Scalar::NAN),
            )
        } else {
            (
                mean(fm.iter().map(|m| m.accuracy)),
                mean(fm.iter().map(|m| m.precision)),
                mean(fm.iter().map(|m| m.recall)),
                mean(fm.iter().map(|m| m.f1)),
                mean(fm.iter().filter_map(|m| m.pearson)),
                mean(fm.iter().filter_map(|m| m.spearman)),
            )
        };
        summaries.push(ComboSummary {
            kind,
            clusters,
            resampling: mode,
            name,
            per_fold: fm.clone(),
            accuracy,
            precision,
            recall,
            f1,
            pearson,
            spearman,
        });
    }

    let results_csv = out_dir.join("results.csv");
    write_results_csv(&results_csv, &summaries)?;
    let predictions_csv = out_dir.join("predictions.csv");
    write_predictions_csv(&predictions_csv, &prediction_rows)?;
    let clusters_csv = out_dir.join("clusters.csv");
    write_clusters_csv(&clusters_csv, last_cluster_model.as_ref(), &last_rates)?;
    let heatmap_csv = out_dir.join("heatmap.csv");
    write_heatmap_csv(&heatmap_csv, &heatmap_rows)?;

    Ok(ForecastOutputs {
        cells_csv,
        results_csv,
        predictions_csv,
        clusters_csv,
        heatmap_csv,
        model_dir,
        dataset_report: built.report,
        filter_report,
        folds,
        combos: summaries,
        warnings,
    })
}

#[derive(Debug, Clone)]
struct PredictionRow {
    model: String,
    fold: usize,
    segment_id: SegmentId,
    window: TimeWindow,
    probability: Scalar,
    label: u8,
}

fn write_cells_csv(path: &Path, dataset: &Dataset) -> Result<(), PipelineError> {
    let f = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(f);
    let mut header = vec!["segment_id".to_string(), "date".into(), "window_index".into()];
    header.extend(dataset.feature_names.iter().cloned());
    header.push("incident_count".into());
    header.push("label".into());
    writeln!(w, "{}", header.join(",")).map_err(io_err(path))?;
    for r in &dataset.records {
        let mut row = vec![
            r.segment_id.to_string(),
            r.window.date.to_string(),
            r.window.index.to_string(),
        ];
        row.extend(r.features.iter().map(|v| format!("{v}")));
        row.push(r.incident_count.to_string());
        row.push(r.label().to_string());
        writeln!(w, "{}", row.join(",")).map_err(io_err(path))?;
    }
    Ok(())
}

fn fmt_metric(v: Scalar) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.6}")
    }
}

fn write_results_csv(path: &Path, summaries: &[ComboSummary]) -> Result<(), PipelineError> {
    let f = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(f);
    writeln!(
        w,
        "Model,Clustering,Resampling,Name,Accuracy,Precision,Recall,F1-Score,Pearson,Spearman"
    )
    .map_err(io_err(path))?;
    for s in summaries {
        let clustering = if s.clusters <= 1 {
            "NoC1".to_string()
        } else {
            format!("KM{}", s.clusters)
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            s.kind.label(),
            clustering,
            s.resampling.label(),
            s.name,
            fmt_metric(s.accuracy),
            fmt_metric(s.precision),
            fmt_metric(s.recall),
            fmt_metric(s.f1),
            fmt_metric(s.pearson),
            fmt_metric(s.spearman),
        )
        .map_err(io_err(path))?;
    }
    Ok(())
}

fn write_predictions_csv(path: &Path, rows: &[PredictionRow]) -> Result<(), PipelineError> {
    let f = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(f);
    writeln!(w, "model,fold,segment_id,date,window_index,probability,label").map_err(io_err(path))?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.model, r.fold, r.segment_id, r.window.date, r.window.index, r.probability, r.label
        )
        .map_err(io_err(path))?;
    }
    Ok(())
}

fn write_clusters_csv(
    path: &Path,
    model: Option<&ClusterModel<Scalar>>,
    rates: &BTreeMap<SegmentId, Scalar>,
) -> Result<(), PipelineError> {
    let f = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(f);
    writeln!(w, "segment_id,cluster_id,rate").map_err(io_err(path))?;
    if let Some(m) = model {
        for (seg, cluster) in &m.assignment {
            let rate = rates.get(seg).copied().unwrap_or(0.0);
            writeln!(w, "{seg},{cluster},{rate}").map_err(io_err(path))?;
        }
    }
    Ok(())
}

fn write_heatmap_csv(
    path: &Path,
    rows: &[(usize, SegmentId, Scalar)],
) -> Result<(), PipelineError> {
    let f = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(f);
    writeln!(w, "fold,segment_id,rate").map_err(io_err(path))?;
    for (fold, seg, rate) in rows {
        writeln!(w, "{fold},{seg},{rate}").map_err(io_err(path))?;
    }
    Ok(())
}

/// One summary.csv row.
#[derive(Debug, Clone)]
pub struct PolicyRow {
    pub model: String,
    pub p: usize,
    pub alpha: Scalar,
    pub summary: PolicySummary,
}

/// Everything run_allocation wrote and measured.
#[derive(Debug)]
pub struct AllocationOutputs {
    pub summary_csv: PathBuf,
    pub trace_csv: PathBuf,
    pub allocations_csv: PathBuf,
    pub rows: Vec<PolicyRow>,
    /// Test incidents excluded because they did not map to a predicted
    /// segment.
    pub incidents_excluded: usize,
}

struct LoadedPredictions {
    /// model -> window -> (segment index -> probability).
    by_model: BTreeMap<String, BTreeMap<TimeWindow, HashMap<usize, Scalar>>>,
    /// window -> fold.
    fold_of_window: BTreeMap<TimeWindow, usize>,
    /// Retained segment ids, sorted; index aligns demand vectors.
    segments: Vec<SegmentId>,
}

fn read_predictions(path: &Path) -> Result<LoadedPredictions, PipelineError> {
    let mut rdr = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| PipelineError::MissingData(format!("cannot open {}: {e}", path.display())))?;
    let mut seg_set: BTreeSet<SegmentId> = BTreeSet::new();
    let mut raw: Vec<(String, usize, SegmentId, TimeWindow, Scalar)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| PipelineError::MissingData(format!("bad predictions row: {e}")))?;
        let model = rec.get(0).unwrap_or("").to_string();
        let fold: usize = rec
            .get(1)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| PipelineError::MissingData("bad fold in predictions".into()))?;
        let seg: SegmentId = rec.get(2).unwrap_or("").into();
        let date = rec
            .get(3)
            .and_then(ingest::sources::parse_date)
            .ok_or_else(|| PipelineError::MissingData("bad date in predictions".into()))?;
        let index: u8 = rec
            .get(4)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| PipelineError::MissingData("bad window_index in predictions".into()))?;
        let probability: Scalar = rec
            .get(5)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| PipelineError::MissingData("bad probability in predictions".into()))?;
        let window = TimeWindow { date, index };
        seg_set.insert(seg.clone());
        raw.push((model, fold, seg, window, probability));
    }
    if raw.is_empty() {
        return Err(PipelineError::MissingData(format!(
            "{} holds no prediction rows",
            path.display()
        )));
    }
    let segments: Vec<SegmentId> = seg_set.into_iter().collect();
    let seg_idx: HashMap<&SegmentId, usize> =
        segments.iter().enumerate().map(|(i, s)| (s, i)).collect();
    let mut by_model: BTreeMap<String, BTreeMap<TimeWindow, HashMap<usize, Scalar>>> =
        BTreeMap::new();
    let mut fold_of_window = BTreeMap::new();
    for (model, fold, seg, window, proba) in raw {
        fold_of_window.insert(window, fold);
        by_model
            .entry(model)
            .or_default()
            .entry(window)
            .or_default()
            .insert(seg_idx[&seg], proba);
    }
    Ok(LoadedPredictions {
        by_model,
        fold_of_window,
        segments,
    })
}

fn read_heatmap(path: &Path) -> Result<BTreeMap<(usize, SegmentId), Scalar>, PipelineError> {
    let mut rdr = csv::ReaderBuilder::new().from_path(path).map_err(|e| {
        PipelineError::MissingData(format!(
            "cannot open {} (run run-forecast first): {e}",
            path.display()
        ))
    })?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| PipelineError::MissingData(format!("bad heatmap row: {e}")))?;
        let fold: usize = rec
            .get(0)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| PipelineError::MissingData("bad fold in heatmap".into()))?;
        let seg: SegmentId = rec.get(1).unwrap_or("").into();
        let rate: Scalar = rec
            .get(2)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| PipelineError::MissingData("bad rate in heatmap".into()))?;
        out.insert((fold, seg), rate);
    }
    Ok(out)
}

/// Allocate responders per window from the prediction file and replay the
/// test incidents with greedy dispatch, for every (model, p, alpha) point.
pub fn run_allocation(
    cfg: &RunConfig,
    predictions_path: &Path,
) -> Result<AllocationOutputs, PipelineError> {
    cfg.validate()?;
    let out_dir = &cfg.paths.out_dir;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let preds = read_predictions(predictions_path)?;
    let heatmap_path = predictions_path
        .parent()
        .unwrap_or(Path::new("."))
        .join("heatmap.csv");
    let heatmap = if cfg.allocation.static_models.is_empty() {
        BTreeMap::new()
    } else {
        read_heatmap(&heatmap_path)?
    };

    // Segment centroids for the retained (predicted) segments.
    let segments = ingest::sources::read_segments(&cfg.paths.segments)?;
    let mut centroid_of: HashMap<&str, (Scalar, Scalar)> = HashMap::new();
    for s in &segments {
        centroid_of.insert(s.id.as_str(), s.representative_point());
    }
    let mut edge_points = Vec::with_capacity(preds.segments.len());
    for seg in &preds.segments {
        let Some(&pt) = centroid_of.get(seg.as_str()) else {
            return Err(PipelineError::MissingData(format!(
                "prediction segment {seg} not present in {}",
                cfg.paths.segments.display()
            )));
        };
        edge_points.push(pt);
    }

    let grid = crate::allocation::make_grid(&cfg.study.bbox, cfg.allocation.cell_size_deg);
    let centers: Vec<(Scalar, Scalar)> = grid.iter().map(|g| g.center).collect();
    let distances = DistanceTable::from_points(&edge_points, &centers);

    // Test incidents grouped per window, restricted to predicted segments.
    let incidents = ingest::sources::read_incidents(&cfg.paths.incidents)?;
    let mapper = ingest::SegmentMapper::new(&segments);
    let predicted: BTreeSet<&SegmentId> = preds.segments.iter().collect();
    let windows: Vec<TimeWindow> = preds.fold_of_window.keys().copied().collect();
    let window_set: BTreeSet<TimeWindow> = windows.iter().copied().collect();
    let mut per_window_incidents: BTreeMap<TimeWindow, Vec<IncidentEvent>> = BTreeMap::new();
    let mut excluded = 0usize;
    for inc in &incidents {
        let local = inc.local_time(cfg.study.timezone_offset_hours);
        let window = crate::domain::window_of(local);
        if !window_set.contains(&window) {
            continue;
        }
        let mapped = mapper.map(inc.lat, inc.lon);
        let keep = mapped.map(|id| predicted.contains(id)).unwrap_or(false);
        if !keep {
            excluded += 1;
            continue;
        }
        per_window_incidents.entry(window).or_default().push(IncidentEvent {
            id: inc.id.clone(),
            time: local,
            location: (inc.lat, inc.lon),
        });
    }
    for evs in per_window_incidents.values_mut() {
        evs.sort_by(|a, b| a.time.cmp(&b.time).then_with(|| a.id.cmp(&b.id)));
    }

    let dispatch_cfg = DispatchConfig {
        busy_minutes: cfg.dispatch.busy_minutes,
        penalty_km: cfg.penalty_km(),
    };

    let mut rows = Vec::new();
    let mut all_outcomes: Vec<(String, usize, Scalar, Vec<WindowOutcome>)> = Vec::new();
    for model in &cfg.allocation.models {
        let is_static = cfg.allocation.static_models.contains(model);
        let model_preds = preds.by_model.get(model).ok_or_else(|| {
            PipelineError::MissingData(format!(
                "model '{model}' not found in {}",
                predictions_path.display()
            ))
        })?;
        // Demand per window: per-window predictions, or the fold's training
        // heatmap for static models.
        let mut scenarios: Vec<WindowScenario> = Vec::new();
        for window in &windows {
            let Some(wp) = model_preds.get(window) else { continue };
            let demand: Vec<Scalar> = if is_static {
                let fold = preds.fold_of_window[window];
                preds
                    .segments
                    .iter()
                    .map(|s| heatmap.get(&(fold, s.clone())).copied().unwrap_or(0.0))
                    .collect()
            } else {
                (0..preds.segments.len())
                    .map(|i| wp.get(&i).copied().unwrap_or(0.0))
                    .collect()
            };
            if demand.iter().sum::<Scalar>() <= 0.0 {
                continue;
            }
            scenarios.push(WindowScenario {
                window: *window,
                demand,
                incidents: per_window_incidents.get(window).cloned().unwrap_or_default(),
            });
        }
        for &p in &cfg.allocation.p {
            for &alpha in &cfg.allocation.alpha {
                let (outcomes, summary) = evaluate_policy(
                    &scenarios,
                    &distances,
                    &centers,
                    p,
                    alpha,
                    &dispatch_cfg,
                    cfg.run.workers,
                )?;
                rows.push(PolicyRow {
                    model: model.clone(),
                    p,
                    alpha,
                    summary,
                });
                all_outcomes.push((model.clone(), p, alpha, outcomes));
            }
        }
    }

    let summary_csv = out_dir.join("summary.csv");
    write_summary_csv(&summary_csv, &rows)?;
    let trace_csv = out_dir.join("trace.csv");
    let allocations_csv = out_dir.join("allocations.csv");
    write_trace_and_allocations(&trace_csv, &allocations_csv, &grid, &all_outcomes)?;

    Ok(AllocationOutputs {
        summary_csv,
        trace_csv,
        allocations_csv,
        rows,
        incidents_excluded: excluded,
    })
}

fn write_summary_csv(path: &Path, rows: &[PolicyRow]) -> Result<(), PipelineError> {
    let f = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(f);
    writeln!(
        w,
        "model,p,alpha,windows,incidents,served,unattended_total,unattended_mean,unattended_max,\
         dist_per_accident_min,dist_per_accident_median,dist_per_accident_max,\
         dist_served_min,dist_served_median,dist_served_max"
    )
    .map_err(io_err(path))?;
    for r in rows {
        let s = &r.summary;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.model,
            r.p,
            r.alpha,
            s.windows,
            s.incidents,
            s.served,
            s.unattended_total,
            fmt_metric(s.unattended_mean),
            s.unattended_max,
            fmt_metric(s.dist_per_incident.0),
            fmt_metric(s.dist_per_incident.1),
            fmt_metric(s.dist_per_incident.2),
            fmt_metric(s.dist_served.0),
            fmt_metric(s.dist_served.1),
            fmt_metric(s.dist_served.2),
        )
        .map_err(io_err(path))?;
    }
    Ok(())
}

fn write_trace_and_allocations(
    trace_path: &Path,
    alloc_path: &Path,
    grid: &[crate::domain::GridLocation],
    outcomes: &[(String, usize, Scalar, Vec<WindowOutcome>)],
) -> Result<(), PipelineError> {
    let tf = std::fs::File::create(trace_path).map_err(io_err(trace_path))?;
    let mut tw = std::io::BufWriter::new(tf);
    writeln!(
        tw,
        "model,p,alpha,date,window_index,incident_id,responder,distance_km,unattended"
    )
    .map_err(io_err(trace_path))?;
    let af = std::fs::File::create(alloc_path).map_err(io_err(alloc_path))?;
    let mut aw = std::io::BufWriter::new(af);
    writeln!(
        aw,
        "model,p,alpha,date,window_index,responder,cell_row,cell_col,center_lat,center_lon,demand_share"
    )
    .map_err(io_err(alloc_path))?;
    for (model, p, alpha, windows) in outcomes {
        for o in windows {
            for (ri, (&loc, &share)) in o.chosen.iter().zip(&o.shares).enumerate() {
                let g = &grid[loc];
                writeln!(
                    aw,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    model,
                    p,
                    alpha,
                    o.window.date,
                    o.window.index,
                    ri,
                    g.row,
                    g.col,
                    g.center.0,
                    g.center.1,
                    share,
                )
                .map_err(io_err(alloc_path))?;
            }
            for rec in &o.trace.records {
                writeln!(
                    tw,
                    "{},{},{},{},{},{},{},{},{}",
                    model,
                    p,
                    alpha,
                    o.window.date,
                    o.window.index,
                    rec.incident_id,
                    rec.responder.map_or(String::new(), |r| r.to_string()),
                    rec.distance_km,
                    u8::from(rec.responder.is_none()),
                )
                .map_err(io_err(trace_path))?;
            }
        }
    }
    Ok(())
}

// Re-exported for callers that orchestrate the two phases together.
pub use crate::synthetic::gen_synthetic;
