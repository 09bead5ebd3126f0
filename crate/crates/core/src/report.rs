//! Report emission for retrieval evaluations.
//!
//! Takes one accuracy-vs-k table per model and writes two artifacts into an
//! output directory: `retrieval.csv` (one row per model/k pair) and
//! `retrieval.svg` (every model as a labeled curve on a single axis set).
//! The SVG is written by hand — a static image needs nothing more — and the
//! output is byte-for-byte deterministic for a given input.
//!
//! With no data points at all, only the header-row CSV is written and no
//! image is produced; that is still a successful (if empty) report.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;

/// File name of the accuracy table inside a report directory.
pub const REPORT_CSV: &str = "retrieval.csv";
/// File name of the curve plot inside a report directory.
pub const REPORT_SVG: &str = "retrieval.svg";

/// Accuracy-vs-k results for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalCurve {
    /// Legend label (checkpoint name, "scratch", ...).
    pub model: String,
    /// `(k, accuracy)` pairs; drawn and tabulated in ascending k.
    pub points: Vec<(usize, f64)>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 62.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 24.0;
const MARGIN_BOTTOM: f64 = 52.0;

/// Line colors, cycled when there are more models than entries.
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// Write `retrieval.csv` (and `retrieval.svg` when there is anything to
/// draw) under `dir`. Returns the paths of the files actually written.
pub fn write_retrieval_report(curves: &[RetrievalCurve], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;

    // Each curve sorted by k; empty curves drop out entirely.
    let mut sorted: Vec<RetrievalCurve> = curves
        .iter()
        .filter(|c| !c.points.is_empty())
        .cloned()
        .collect();
    for c in &mut sorted {
        c.points.sort_by_key(|&(k, _)| k);
    }

    let csv_path = dir.join(REPORT_CSV);
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["model", "k", "accuracy"])?;
    for c in &sorted {
        for &(k, acc) in &c.points {
            w.write_record([c.model.as_str(), &k.to_string(), &format!("{acc:.6}")])?;
        }
    }
    w.flush()?;
    let mut written = vec![csv_path];

    if sorted.is_empty() {
        return Ok(written);
    }
    let svg_path = dir.join(REPORT_SVG);
    fs::write(&svg_path, render_svg(&sorted))?;
    written.push(svg_path);
    Ok(written)
}

fn render_svg(curves: &[RetrievalCurve]) -> String {
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let max_k = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|&(k, _)| k))
        .max()
        .unwrap_or(1)
        .max(1);
    let x_of = |k: usize| MARGIN_LEFT + k as f64 / max_k as f64 * plot_w;
    let y_of = |acc: f64| MARGIN_TOP + (1.0 - acc.clamp(0.0, 1.0)) * plot_h;

    let mut s = String::new();
    s.push_str(&format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#,
    ));
    s.push('\n');
    s.push_str(&format!(
        r##"<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>"##
    ));
    s.push('\n');

    // Horizontal gridlines with accuracy labels every 0.2.
    for i in 0..=5 {
        let acc = i as f64 * 0.2;
        let y = y_of(acc);
        s.push_str(&format!(
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/>"##,
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w
        ));
        s.push_str(&format!(
            r##"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="end" fill="#333333">{acc:.1}</text>"##,
            MARGIN_LEFT - 8.0,
            y + 4.0
        ));
        s.push('\n');
    }

    // One x tick per distinct k across all curves.
    let mut ticks: Vec<usize> = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|&(k, _)| k))
        .collect();
    ticks.sort_unstable();
    ticks.dedup();
    for &k in &ticks {
        let x = x_of(k);
        s.push_str(&format!(
            r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#bbbbbb"/>"##,
            MARGIN_TOP + plot_h,
            MARGIN_TOP + plot_h + 5.0
        ));
        s.push_str(&format!(
            r##"<text x="{x:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle" fill="#333333">{k}</text>"##,
            MARGIN_TOP + plot_h + 20.0
        ));
        s.push('\n');
    }

    // Axes.
    s.push_str(&format!(
        r##"<line x1="{l:.1}" y1="{t:.1}" x2="{l:.1}" y2="{b:.1}" stroke="#333333"/>"##,
        l = MARGIN_LEFT,
        t = MARGIN_TOP,
        b = MARGIN_TOP + plot_h
    ));
    s.push_str(&format!(
        r##"<line x1="{l:.1}" y1="{b:.1}" x2="{r:.1}" y2="{b:.1}" stroke="#333333"/>"##,
        l = MARGIN_LEFT,
        r = MARGIN_LEFT + plot_w,
        b = MARGIN_TOP + plot_h
    ));
    s.push('\n');
    s.push_str(&format!(
        r##"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle" fill="#333333">nearest neighbours k</text>"##,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    ));
    s.push_str(&format!(
        r##"<text x="16" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.1})" fill="#333333">top-k retrieval accuracy</text>"##,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0
    ));
    s.push('\n');

    // Curves with point markers.
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = c
            .points
            .iter()
            .map(|&(k, acc)| format!("{:.1},{:.1}", x_of(k), y_of(acc)))
            .collect();
        s.push_str(&format!(
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        ));
        s.push('\n');
        for &(k, acc) in &c.points {
            s.push_str(&format!(
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                x_of(k),
                y_of(acc)
            ));
        }
        s.push('\n');
    }

    // Legend, top-left inside the plot.
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = MARGIN_TOP + 16.0 + i as f64 * 18.0;
        s.push_str(&format!(
            r#"<line x1="{x:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{color}" stroke-width="2"/>"#,
            MARGIN_LEFT + 34.0,
            x = MARGIN_LEFT + 10.0
        ));
        s.push_str(&format!(
            r##"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" fill="#333333">{}</text>"##,
            MARGIN_LEFT + 40.0,
            y + 4.0,
            escape(&c.model)
        ));
        s.push('\n');
    }

    s.push_str("</svg>\n");
    s
}

/// Minimal XML text escaping for legend labels.
fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
