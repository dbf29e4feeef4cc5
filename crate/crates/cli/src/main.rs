//! Command-line surface: synthetic data generation, the forecasting
//! pipeline, allocation + dispatch replay, and report rendering.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 on data errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use roadrisk_core::config::RunConfig;
use roadrisk_core::pipeline::{run_allocation, run_forecast, PipelineError};
use roadrisk_core::report::render_report;
use roadrisk_core::synthetic::{gen_synthetic, SyntheticWorldSpec};

#[derive(Parser)]
#[command(
    name = "roadrisk",
    about = "Sparse highway-incident forecasting, balanced p-median responder allocation, and dispatch simulation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world (four source CSVs, ground truth, and a
    /// ready-to-run params.toml) from a world spec.
    GenData {
        /// TOML synthetic-world spec.
        #[arg(long)]
        spec: PathBuf,
        /// Output directory for the generated files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run ingest, segment filtering, clustering, resampling, model fits,
    /// threshold tuning, and metrics for every configured combination.
    RunForecast {
        /// Pipeline configuration (params.toml).
        #[arg(long)]
        config: PathBuf,
    },
    /// Allocate responders per window from a prediction file and replay test
    /// incidents through the greedy dispatcher.
    RunAllocation {
        /// Pipeline configuration (params.toml).
        #[arg(long)]
        config: PathBuf,
        /// predictions.csv produced by run-forecast.
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Render the self-contained HTML report from results.csv and
    /// summary.csv.
    Report {
        /// Directory holding results.csv (and summary.csv when present).
        #[arg(long = "in")]
        in_dir: PathBuf,
        /// Output HTML file.
        #[arg(long)]
        out: PathBuf,
    },
}

fn fail(code: i32, err: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(code as u8)
}

fn pipeline_fail(err: PipelineError) -> ExitCode {
    fail(err.exit_code(), err)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData { spec, out } => {
            let spec = match SyntheticWorldSpec::load(&spec) {
                Ok(s) => s,
                Err(e) => return fail(2, e),
            };
            match gen_synthetic(&spec, &out) {
                Ok(world) => {
                    println!(
                        "generated {} segments, {} incidents under {}",
                        world.truth.segments.len(),
                        world.n_incidents,
                        out.display()
                    );
                    println!("ready-to-run config: {}", world.params_toml.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(3, e),
            }
        }
        Command::RunForecast { config } => {
            let cfg = match RunConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(2, e),
            };
            match run_forecast(&cfg) {
                Ok(out) => {
                    let r = &out.dataset_report;
                    println!(
                        "ingested {} incidents ({} mapped, {} unmapped, {} out of range)",
                        r.incidents_total,
                        r.incidents_mapped,
                        r.incidents_unmapped,
                        r.incidents_total - r.incidents_in_range
                    );
                    println!(
                        "cells: {} emitted, {} dropped for missing covariates",
                        r.cells_emitted, r.cells_dropped_missing
                    );
                    let f = &out.filter_report;
                    println!(
                        "filter kept {}/{} segments, retaining {:.1}% of incidents at {:.2}% sparsity",
                        f.segments_kept,
                        f.segments_total,
                        100.0 * f.retained_incident_fraction,
                        100.0 * f.sparsity
                    );
                    for w in &out.warnings {
                        eprintln!("warning: {w}");
                    }
                    println!("folds: {}", out.folds.len());
                    for c in &out.combos {
                        println!(
                            "{:<14} accuracy {:.3} precision {:.3} recall {:.3} f1 {:.3} pearson {:.3} spearman {:.3}",
                            c.name, c.accuracy, c.precision, c.recall, c.f1, c.pearson, c.spearman
                        );
                    }
                    println!("results: {}", out.results_csv.display());
                    println!("predictions: {}", out.predictions_csv.display());
                    ExitCode::SUCCESS
                }
                Err(e) => pipeline_fail(e),
            }
        }
        Command::RunAllocation { config, predictions } => {
            let cfg = match RunConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(2, e),
            };
            match run_allocation(&cfg, &predictions) {
                Ok(out) => {
                    if out.incidents_excluded > 0 {
                        eprintln!(
                            "note: {} test incidents outside the predicted segment set were excluded",
                            out.incidents_excluded
                        );
                    }
                    for row in &out.rows {
                        let s = &row.summary;
                        println!(
                            "{:<14} p={:<3} alpha={:<4} windows {:<4} incidents {:<5} unattended mean {:.2} max {} median km/accident {:.2}",
                            row.model,
                            row.p,
                            row.alpha,
                            s.windows,
                            s.incidents,
                            s.unattended_mean,
                            s.unattended_max,
                            s.dist_per_incident.1
                        );
                    }
                    println!("summary: {}", out.summary_csv.display());
                    println!("trace: {}", out.trace_csv.display());
                    ExitCode::SUCCESS
                }
                Err(e) => pipeline_fail(e),
            }
        }
        Command::Report { in_dir, out } => {
            let results = in_dir.join("results.csv");
            let summary = in_dir.join("summary.csv");
            match render_report(&results, &summary) {
                Ok(html) => {
                    if let Err(e) = std::fs::write(&out, html) {
                        return fail(1, format!("cannot write {}: {e}", out.display()));
                    }
                    println!("report: {}", out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => pipeline_fail(e),
            }
        }
    }
}
