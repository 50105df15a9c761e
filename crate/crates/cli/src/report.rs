//! Run-log aggregation across seeds and SVG line charts.
//!
//! Charts are written by hand with fixed-precision coordinates so that the
//! same logs always produce the same bytes.

use std::fmt::Write as _;

use cre_core::optimizer::RoundLog;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Metrics plotted per round, with their accessors.
pub const METRICS: &[(&str, fn(&RoundLog) -> Option<f64>)] = &[
    ("top", |r| Some(r.top)),
    ("medium", |r| Some(r.medium)),
    ("diversity", |r| Some(r.diversity)),
    ("emb_similarity", |r| Some(r.emb_similarity)),
    ("mean_return", |r| Some(r.mean_return)),
    ("mean_entropy", |r| r.mean_entropy),
    ("buffer_min", |r| Some(r.buffer_min)),
    ("buffer_max", |r| Some(r.buffer_max)),
    ("oracle_top", |r| r.oracle_top),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub group: String,
    pub metric: String,
    pub round: usize,
    pub mean: f64,
    /// Sample standard deviation across runs; zero for a single run.
    pub sd: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub rounds: Vec<usize>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub n: usize,
}

pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-round mean and sd of one metric over runs. Rounds are truncated to
/// the shortest log; `None` if any run lacks the metric.
pub fn aggregate(label: &str, logs: &[Vec<RoundLog>], metric: fn(&RoundLog) -> Option<f64>) -> CliResult<Option<Series>> {
    if logs.is_empty() || logs.iter().any(Vec::is_empty) {
        return Err(CliError::Usage(format!("group {label:?} has no run log rows")));
    }
    let rounds = logs.iter().map(Vec::len).min().unwrap_or(0);
    let mut s = Series {
        label: label.to_string(),
        rounds: Vec::with_capacity(rounds),
        mean: Vec::with_capacity(rounds),
        sd: Vec::with_capacity(rounds),
        n: logs.len(),
    };
    for i in 0..rounds {
        let Some(values) = logs.iter().map(|l| metric(&l[i])).collect::<Option<Vec<f64>>>() else {
            return Ok(None);
        };
        let (m, sd) = mean_sd(&values);
        s.rounds.push(logs[0][i].round);
        s.mean.push(m);
        s.sd.push(sd);
    }
    Ok(Some(s))
}

const PALETTE: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart of mean value per round, with a ±sd band for multi-run series.
pub fn line_chart(title: &str, y_label: &str, series: &[Series]) -> String {
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for (i, &r) in s.rounds.iter().enumerate() {
            x_lo = x_lo.min(r as f64);
            x_hi = x_hi.max(r as f64);
            y_lo = y_lo.min(s.mean[i] - s.sd[i]);
            y_hi = y_hi.max(s.mean[i] + s.sd[i]);
        }
    }
    if !x_lo.is_finite() {
        (x_lo, x_hi, y_lo, y_hi) = (0.0, 1.0, 0.0, 1.0);
    }
    if x_hi == x_lo {
        x_hi = x_lo + 1.0;
    }
    if y_hi - y_lo < 1e-12 {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let py = |y: f64| TOP + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#333"/>"##
    );
    let mut x_ticks: Vec<f64> = (0..=4).map(|t| (x_lo + t as f64 / 4.0 * (x_hi - x_lo)).round()).collect();
    x_ticks.dedup();
    for x in x_ticks {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{:.0}</text>"#,
            px(x),
            TOP + plot_h + 18.0,
            x
        );
    }
    for t in 0..=4 {
        let y = y_lo + t as f64 / 4.0 * (y_hi - y_lo);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{:.3}</text>"##,
            LEFT,
            py(y),
            LEFT + plot_w,
            py(y),
            LEFT - 6.0,
            py(y) + 4.0,
            y
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">round</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        escape(y_label)
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if s.n > 1 && !s.rounds.is_empty() {
            let mut pts: Vec<String> = Vec::with_capacity(2 * s.rounds.len());
            for i in 0..s.rounds.len() {
                pts.push(format!("{:.2},{:.2}", px(s.rounds[i] as f64), py(s.mean[i] + s.sd[i])));
            }
            for i in (0..s.rounds.len()).rev() {
                pts.push(format!("{:.2},{:.2}", px(s.rounds[i] as f64), py(s.mean[i] - s.sd[i])));
            }
            let _ = writeln!(
                svg,
                r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                pts.join(" ")
            );
        }
        let pts: Vec<String> = (0..s.rounds.len())
            .map(|i| format!("{:.2},{:.2}", px(s.rounds[i] as f64), py(s.mean[i])))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="series" points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#,
            pts.join(" ")
        );
        let ly = TOP + 14.0 + 18.0 * k as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="3"/><text x="{:.2}" y="{:.2}">{} (n={})</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(&s.label),
            s.n
        );
    }
    svg.push_str("</svg>\n");
    svg
}
