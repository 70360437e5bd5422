//! Bench tables on disk: a versioned results CSV, a separate timings CSV,
//! a per-distance summary and SVG line charts of the summary.
//!
//! Wall times live in their own file so that two runs with equal seeds
//! produce byte-identical results files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::{summarize, BenchRecord, Method, SummaryRow};
use crate::error::{ensure, Error, Result};

/// Bumped whenever a column is added, removed or reinterpreted.
pub const SCHEMA_VERSION: u32 = 1;
const SCHEMA_LINE: &str = "# pflash-bench-results v1";
const TIMINGS_LINE: &str = "# pflash-bench-timings v1";

#[derive(Debug, Serialize, Deserialize)]
struct ResultRow {
    pattern: String,
    scene: usize,
    method: Method,
    distance: f64,
    baseline: f64,
    psnr_db: Option<f64>,
    ssim: Option<f64>,
    disparity_mae: Option<f64>,
    input_gain_db: Option<f64>,
    status: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TimingRow {
    pattern: String,
    scene: usize,
    method: Method,
    distance: f64,
    baseline: f64,
    wall_time_s: f64,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

fn to_csv<T: Serialize>(first_line: &str, rows: impl IntoIterator<Item = T>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let body = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
    let body = String::from_utf8(body).map_err(|e| Error::Format(e.to_string()))?;
    Ok(format!("{first_line}\n{body}"))
}

fn from_csv<T: for<'de> Deserialize<'de>>(first_line: &str, text: &str) -> Result<Vec<T>> {
    let (head, body) = text.split_once('\n').unwrap_or((text, ""));
    ensure!(
        head.trim_end() == first_line,
        Error::Format(format!("expected schema line {first_line:?}, found {head:?}"))
    );
    csv::Reader::from_reader(body.as_bytes())
        .deserialize()
        .map(|r| r.map_err(csv_err))
        .collect()
}

/// Results table as CSV text (no wall times).
pub fn results_csv(records: &[BenchRecord]) -> Result<String> {
    to_csv(
        SCHEMA_LINE,
        records.iter().map(|r| ResultRow {
            pattern: r.pattern.clone(),
            scene: r.scene,
            method: r.method,
            distance: r.distance,
            baseline: r.baseline,
            psnr_db: r.psnr_db,
            ssim: r.ssim,
            disparity_mae: r.disparity_mae,
            input_gain_db: r.input_gain_db,
            status: r.status.clone(),
        }),
    )
}

/// Wall times, one row per record in the same order.
pub fn timings_csv(records: &[BenchRecord]) -> Result<String> {
    to_csv(
        TIMINGS_LINE,
        records.iter().map(|r| TimingRow {
            pattern: r.pattern.clone(),
            scene: r.scene,
            method: r.method,
            distance: r.distance,
            baseline: r.baseline,
            wall_time_s: r.wall_time_s,
        }),
    )
}

/// Inverse of [`results_csv`] (plus [`timings_csv`] when given). Without
/// timings every wall time reads back as 0.
pub fn parse_results(results: &str, timings: Option<&str>) -> Result<Vec<BenchRecord>> {
    let rows: Vec<ResultRow> = from_csv(SCHEMA_LINE, results)?;
    let times: Option<Vec<TimingRow>> = timings.map(|t| from_csv(TIMINGS_LINE, t)).transpose()?;
    if let Some(t) = &times {
        ensure!(
            t.len() == rows.len(),
            Error::Format(format!("{} timing rows for {} results", t.len(), rows.len()))
        );
    }
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            let wall = match &times {
                None => 0.0,
                Some(t) => {
                    let t = &t[i];
                    ensure!(
                        t.scene == r.scene && t.method == r.method && t.distance == r.distance && t.pattern == r.pattern,
                        Error::Format(format!("timing row {i} does not match its result row"))
                    );
                    t.wall_time_s
                }
            };
            Ok(BenchRecord {
                pattern: r.pattern,
                scene: r.scene,
                method: r.method,
                distance: r.distance,
                baseline: r.baseline,
                psnr_db: r.psnr_db,
                ssim: r.ssim,
                disparity_mae: r.disparity_mae,
                input_gain_db: r.input_gain_db,
                wall_time_s: wall,
                status: r.status,
            })
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<String> {
    to_csv("# pflash-bench-summary v1", rows)
}

/// One line of a chart.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub y_label: String,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub svg: String,
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD_L: f64 = 64.0;
const PAD_R: f64 = 120.0;
const PAD_T: f64 = 36.0;
const PAD_B: f64 = 48.0;
const COLORS: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Range covering `[lo, hi]` with 5% padding; a degenerate span is widened
/// to a unit interval around it.
fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Self-contained SVG line chart of `series` against distance. Fails when
/// there is nothing finite to draw.
pub fn line_chart(title: &str, y_label: &str, series: &[Series]) -> Result<Chart> {
    let finite: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    ensure!(
        !finite.is_empty(),
        Error::InvalidArgument(format!("chart {title:?} has no data points"))
    );
    let fold = |f: fn(&(f64, f64)) -> f64| {
        finite.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
    };
    let (x_lo, x_hi) = fold(|p| p.0);
    let (y_lo, y_hi) = fold(|p| p.1);
    let x_range = padded(x_lo, x_hi);
    let y_range = padded(y_lo, y_hi);
    let px = |x: f64| PAD_L + (x - x_range.0) / (x_range.1 - x_range.0) * (W - PAD_L - PAD_R);
    let py = |y: f64| H - PAD_B - (y - y_range.0) / (y_range.1 - y_range.0) * (H - PAD_T - PAD_B);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    // axes and ticks
    let (x0, x1, y0, y1) = (PAD_L, W - PAD_R, H - PAD_B, PAD_T);
    let _ = writeln!(svg, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = x_range.0 + t * (x_range.1 - x_range.0);
        let yv = y_range.0 + t * (y_range.1 - y_range.0);
        let (tx, ty) = (px(xv), py(yv));
        let _ = writeln!(svg, r#"<line x1="{tx:.1}" y1="{y0}" x2="{tx:.1}" y2="{}" stroke="black"/>"#, y0 + 4.0);
        let _ = writeln!(svg, r#"<text x="{tx:.1}" y="{}" text-anchor="middle">{xv:.3}</text>"#, y0 + 18.0);
        let _ = writeln!(svg, r#"<line x1="{}" y1="{ty:.1}" x2="{x0}" y2="{ty:.1}" stroke="black"/>"#, x0 - 4.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.1}" text-anchor="end">{yv:.3}</text>"#, x0 - 6.0, ty + 4.0);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">distance</text>"#, (x0 + x1) / 2.0, H - 10.0);
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
            for p in &pts {
                let (cx, cy) = p.split_once(',').unwrap();
                let _ = writeln!(svg, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#);
            }
        }
        let ly = PAD_T + 16.0 + 18.0 * i as f64;
        let _ = writeln!(svg, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, x1 + 10.0, x1 + 30.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, x1 + 36.0, ly + 4.0, escape(&s.label));
    }
    svg.push_str("</svg>\n");
    Ok(Chart {
        title: title.to_string(),
        y_label: y_label.to_string(),
        x_range,
        y_range,
        svg,
    })
}

/// Summary series for one metric, one line per (pattern, method).
pub fn metric_series(rows: &[SummaryRow], metric: fn(&SummaryRow) -> Option<f64>) -> Vec<Series> {
    let mut keys: Vec<(String, Method)> = rows.iter().map(|r| (r.pattern.clone(), r.method)).collect();
    keys.sort();
    keys.dedup();
    let multi = keys.iter().any(|k| k.0 != keys[0].0);
    keys.into_iter()
        .map(|(pattern, method)| {
            let mut points: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.pattern == pattern && r.method == method)
                .filter_map(|r| metric(r).map(|v| (r.distance, v)))
                .collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            let label = if multi { format!("{pattern} {method:?}") } else { format!("{method:?}") };
            Series { label, points }
        })
        .filter(|s| !s.points.is_empty())
        .collect()
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportFiles {
    pub results: PathBuf,
    pub timings: PathBuf,
    pub summary: PathBuf,
    pub charts: Vec<PathBuf>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `results.csv`, `timings.csv`, `summary.csv` and one SVG per
/// metric that has data. Nothing is written for an empty table.
pub fn emit_report(records: &[BenchRecord], dir: &Path) -> Result<ReportFiles> {
    ensure!(!records.is_empty(), Error::InvalidArgument("empty bench table".into()));
    let summary = summarize(records);
    let metrics: [(&str, &str, fn(&SummaryRow) -> Option<f64>); 3] = [
        ("psnr", "PSNR (dB)", |r| r.mean_psnr_db),
        ("ssim", "SSIM", |r| r.mean_ssim),
        ("mae", "disparity MAE (px)", |r| r.mean_disparity_mae),
    ];
    // render everything before touching the file system
    let mut charts = Vec::new();
    for (name, label, f) in metrics {
        let series = metric_series(&summary, f);
        if !series.is_empty() {
            charts.push((name, line_chart(&format!("{label} vs distance"), label, &series)?));
        }
    }
    ensure!(
        !charts.is_empty(),
        Error::InvalidArgument("no completed cells to chart".into())
    );
    let results = results_csv(records)?;
    let timings = timings_csv(records)?;
    let summary_text = summary_csv(&summary)?;

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = ReportFiles {
        results: dir.join("results.csv"),
        timings: dir.join("timings.csv"),
        summary: dir.join("summary.csv"),
        charts: charts.iter().map(|(n, _)| dir.join(format!("{n}.svg"))).collect(),
    };
    write_text(&files.results, &results)?;
    write_text(&files.timings, &timings)?;
    write_text(&files.summary, &summary_text)?;
    for ((_, c), path) in charts.iter().zip(&files.charts) {
        write_text(path, &c.svg)?;
    }
    Ok(files)
}
