//! Self-contained HTML report over results.csv and summary.csv: the metric
//! table, the unattended-incident table, per-p distance figures, and the
//! alpha-sweep figure. Everything is inline (no external assets).

use std::fmt::Write as _;
use std::path::Path;

use crate::pipeline::PipelineError;
use crate::Scalar;

#[derive(Debug, Clone)]
struct ResultRow {
    model: String,
    clustering: String,
    resampling: String,
    name: String,
    metrics: [Scalar; 6],
}

#[derive(Debug, Clone)]
struct SummaryRow {
    model: String,
    p: usize,
    alpha: Scalar,
    unattended_mean: Scalar,
    unattended_max: Scalar,
    dist_min: Scalar,
    dist_median: Scalar,
    dist_max: Scalar,
}

fn missing(path: &Path, what: &str) -> PipelineError {
    PipelineError::MissingData(format!("{what} in {}", path.display()))
}

fn read_results(path: &Path) -> Result<Vec<ResultRow>, PipelineError> {
    let mut rdr = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| PipelineError::MissingData(format!("cannot open {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|_| missing(path, "bad results row"))?;
        let get = |i: usize| rec.get(i).unwrap_or("").to_string();
        let num = |i: usize| -> Result<Scalar, PipelineError> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| missing(path, "bad metric value"))
        };
        rows.push(ResultRow {
            model: get(0),
            clustering: get(1),
            resampling: get(2),
            name: get(3),
            metrics: [num(4)?, num(5)?, num(6)?, num(7)?, num(8)?, num(9)?],
        });
    }
    if rows.is_empty() {
        return Err(missing(path, "no result rows"));
    }
    Ok(rows)
}

fn read_summary(path: &Path) -> Result<Vec<SummaryRow>, PipelineError> {
    let mut rdr = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| PipelineError::MissingData(format!("cannot open {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|_| missing(path, "bad summary row"))?;
        let num = |i: usize| -> Result<Scalar, PipelineError> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| missing(path, "bad summary value"))
        };
        rows.push(SummaryRow {
            model: rec.get(0).unwrap_or("").to_string(),
            p: num(1)? as usize,
            alpha: num(2)?,
            unattended_mean: num(7)?,
            unattended_max: num(8)?,
            dist_min: num(9)?,
            dist_median: num(10)?,
            dist_max: num(11)?,
        });
    }
    Ok(rows)
}

/// Green (best) to red (worst) cell shading within a column.
fn shade(value: Scalar, min: Scalar, max: Scalar, higher_is_better: bool) -> String {
    if !value.is_finite() || max <= min {
        return "#ffffff".to_string();
    }
    let mut t = (value - min) / (max - min);
    if !higher_is_better {
        t = 1.0 - t;
    }
    // Interpolate red (248,105,107) -> white -> green (99,190,123).
    let (r, g, b) = if t < 0.5 {
        let u = t / 0.5;
        (
            248.0 + (255.0 - 248.0) * u,
            105.0 + (255.0 - 105.0) * u,
            107.0 + (255.0 - 107.0) * u,
        )
    } else {
        let u = (t - 0.5) / 0.5;
        (
            255.0 + (99.0 - 255.0) * u,
            255.0 + (190.0 - 255.0) * u,
            255.0 + (123.0 - 255.0) * u,
        )
    };
    format!("#{:02x}{:02x}{:02x}", r as u8, g as u8, b as u8)
}

fn metric_table(rows: &[ResultRow]) -> String {
    let headers = ["Accuracy", "Precision", "Recall", "F1-Score", "Pearson", "Spearman"];
    let mut mins = [Scalar::INFINITY; 6];
    let mut maxs = [Scalar::NEG_INFINITY; 6];
    for r in rows {
        for (i, &v) in r.metrics.iter().enumerate() {
            if v.is_finite() {
                mins[i] = mins[i].min(v);
                maxs[i] = maxs[i].max(v);
            }
        }
    }
    let mut html = String::new();
    html.push_str("<table><thead><tr><th>Model</th><th>Clustering</th><th>Resampling</th><th>Name</th>");
    for h in headers {
        let _ = write!(html, "<th>{h}</th>");
    }
    html.push_str("</tr></thead><tbody>");
    for r in rows {
        let _ = write!(
            html,
            "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td>",
            r.model, r.clustering, r.resampling, r.name
        );
        for (i, &v) in r.metrics.iter().enumerate() {
            let bg = shade(v, mins[i], maxs[i], true);
            let _ = write!(html, "<td style=\"background:{bg}\">{:.1}</td>", v * 100.0);
        }
        html.push_str("</tr>");
    }
    html.push_str("</tbody></table>");
    html
}

fn unattended_table(rows: &[SummaryRow]) -> String {
    let mut models: Vec<&str> = rows.iter().map(|r| r.model.as_str()).collect();
    models.dedup();
    let mut cols: Vec<(usize, Scalar)> = rows.iter().map(|r| (r.p, r.alpha)).collect();
    cols.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.partial_cmp(&b.1).unwrap()));
    cols.dedup();
    let mut html = String::new();
    html.push_str("<table><thead><tr><th rowspan=\"2\">Model</th>");
    let _ = write!(
        html,
        "<th colspan=\"{}\">average unattended per window</th><th colspan=\"{}\">maximum unattended per window</th>",
        cols.len(),
        cols.len()
    );
    html.push_str("</tr><tr>");
    for _ in 0..2 {
        for &(p, a) in &cols {
            let _ = write!(html, "<th>p={p}, &alpha;={a}</th>");
        }
    }
    html.push_str("</tr></thead><tbody>");
    for m in models {
        let _ = write!(html, "<tr><td>{m}</td>");
        for &(p, a) in &cols {
            let v = rows
                .iter()
                .find(|r| r.model == m && r.p == p && r.alpha == a)
                .map_or(Scalar::NAN, |r| r.unattended_mean);
            let _ = write!(html, "<td>{v:.2}</td>");
        }
        for &(p, a) in &cols {
            let v = rows
                .iter()
                .find(|r| r.model == m && r.p == p && r.alpha == a)
                .map_or(Scalar::NAN, |r| r.unattended_max);
            let _ = write!(html, "<td>{v:.0}</td>");
        }
        html.push_str("</tr>");
    }
    html.push_str("</tbody></table>");
    html
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Min/median/max ranges of the per-window mean travel distance, one panel
/// per responder count.
fn distance_figure(rows: &[SummaryRow], p: usize) -> String {
    let panel: Vec<&SummaryRow> = rows.iter().filter(|r| r.p == p).collect();
    if panel.is_empty() {
        return String::new();
    }
    let (w, h, ml, mb) = (560.0, 260.0, 60.0, 50.0);
    let max_y = panel
        .iter()
        .map(|r| r.dist_max)
        .fold(0.0 as Scalar, Scalar::max)
        .max(1e-9);
    let n = panel.len();
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg viewBox=\"0 0 {w} {h}\" width=\"{w}\" height=\"{h}\" xmlns=\"http://www.w3.org/2000/svg\">"
    );
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"16\" font-size=\"13\" text-anchor=\"middle\">travel distance per accident, p={p} (min / median / max over windows, km)</text>",
        w / 2.0
    );
    // Axes.
    let _ = write!(
        svg,
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        h - mb,
        w - 10.0,
        h - mb
    );
    let _ = write!(svg, "<line x1=\"{ml}\" y1=\"24\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>", h - mb);
    for k in 0..=4 {
        let v = max_y * k as Scalar / 4.0;
        let y = (h - mb) - (h - mb - 24.0) * k as Scalar / 4.0;
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{v:.1}</text>",
            ml - 6.0,
            y + 3.0
        );
        let _ = write!(
            svg,
            "<line x1=\"{ml}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#dddddd\"/>",
            w - 10.0
        );
    }
    for (i, r) in panel.iter().enumerate() {
        let x = ml + (w - ml - 30.0) * (i as Scalar + 0.5) / n as Scalar;
        let ys = |v: Scalar| (h - mb) - (h - mb - 24.0) * v / max_y;
        let color = PALETTE[i % PALETTE.len()];
        let _ = write!(
            svg,
            "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            ys(r.dist_min),
            ys(r.dist_max)
        );
        for v in [r.dist_min, r.dist_max] {
            let _ = write!(
                svg,
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"2\"/>",
                x - 5.0,
                ys(v),
                x + 5.0,
                ys(v)
            );
        }
        let _ = write!(
            svg,
            "<circle cx=\"{x}\" cy=\"{}\" r=\"4\" fill=\"{color}\"/>",
            ys(r.dist_median)
        );
        let _ = write!(
            svg,
            "<text x=\"{x}\" y=\"{}\" font-size=\"9\" text-anchor=\"middle\">{} &alpha;={}</text>",
            h - mb + 14.0,
            r.model,
            r.alpha
        );
    }
    svg.push_str("</svg>");
    svg
}

/// Median travel distance as a function of alpha, one line per (model, p).
fn alpha_sweep_figure(rows: &[SummaryRow]) -> String {
    let mut series: Vec<(String, usize)> = rows.iter().map(|r| (r.model.clone(), r.p)).collect();
    series.sort();
    series.dedup();
    if series.is_empty() {
        return String::new();
    }
    let mut alphas: Vec<Scalar> = rows.iter().map(|r| r.alpha).collect();
    alphas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    alphas.dedup();
    let (w, h, ml, mb) = (560.0, 260.0, 60.0, 40.0);
    let max_y = rows
        .iter()
        .map(|r| r.dist_median)
        .fold(0.0 as Scalar, Scalar::max)
        .max(1e-9);
    let max_a = alphas.last().copied().unwrap_or(1.0).max(1e-9);
    let xs = |a: Scalar| ml + (w - ml - 120.0) * a / max_a;
    let ys = |v: Scalar| (h - mb) - (h - mb - 24.0) * v / max_y;
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg viewBox=\"0 0 {w} {h}\" width=\"{w}\" height=\"{h}\" xmlns=\"http://www.w3.org/2000/svg\">"
    );
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"16\" font-size=\"13\" text-anchor=\"middle\">median travel distance per accident vs &alpha; (km)</text>",
        w / 2.0
    );
    let _ = write!(
        svg,
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        h - mb,
        w - 110.0,
        h - mb
    );
    let _ = write!(svg, "<line x1=\"{ml}\" y1=\"24\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>", h - mb);
    for &a in &alphas {
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\">{a}</text>",
            xs(a),
            h - mb + 14.0
        );
    }
    for k in 0..=4 {
        let v = max_y * k as Scalar / 4.0;
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{v:.1}</text>",
            ml - 6.0,
            ys(v) + 3.0
        );
    }
    for (si, (model, p)) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let pts: Vec<String> = alphas
            .iter()
            .filter_map(|&a| {
                rows.iter()
                    .find(|r| &r.model == model && r.p == *p && r.alpha == a)
                    .map(|r| format!("{},{}", xs(a), ys(r.dist_median)))
            })
            .collect();
        let _ = write!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            pts.join(" ")
        );
        let ly = 30.0 + 14.0 * si as Scalar;
        let _ = write!(
            svg,
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"3\" fill=\"{color}\"/><text x=\"{}\" y=\"{}\" font-size=\"10\">{model} p={p}</text>",
            w - 105.0,
            ly,
            w - 90.0,
            ly + 5.0
        );
    }
    svg.push_str("</svg>");
    svg
}

/// Render the report from the two result files.
pub fn render_report(results_csv: &Path, summary_csv: &Path) -> Result<String, PipelineError> {
    let results = read_results(results_csv)?;
    let summary = if summary_csv.exists() {
        read_summary(summary_csv)?
    } else {
        Vec::new()
    };
    let mut ps: Vec<usize> = summary.iter().map(|r| r.p).collect();
    ps.sort_unstable();
    ps.dedup();

    let mut html = String::new();
    html.push_str(
        "<!DOCTYPE html><html><head><meta charset=\"utf-8\"><title>roadrisk report</title><style>\
         body{font-family:system-ui,sans-serif;margin:2em;max-width:72em}\
         table{border-collapse:collapse;margin:1em 0}\
         th,td{border:1px solid #999;padding:3px 8px;font-size:13px;text-align:right}\
         th{background:#efefef}td:first-child,th:first-child{text-align:left}\
         h2{margin-top:1.6em}</style></head><body>",
    );
    html.push_str("<h1>Forecast and allocation evaluation</h1>");
    html.push_str("<h2>Forecast metrics (percent, averaged over test folds)</h2>");
    html.push_str(&metric_table(&results));
    if !summary.is_empty() {
        html.push_str("<h2>Unattended incidents per 4-hour window</h2>");
        html.push_str(&unattended_table(&summary));
        html.push_str("<h2>Travel distance per accident</h2>");
        for p in ps {
            html.push_str(&distance_figure(&summary, p));
        }
        html.push_str("<h2>Balance-exponent sweep</h2>");
        html.push_str(&alpha_sweep_figure(&summary));
    } else {
        html.push_str("<p>No allocation summary found; run the allocation phase to add dispatch results.</p>");
    }
    html.push_str("</body></html>");
    Ok(html)
}
