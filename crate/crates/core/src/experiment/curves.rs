//! Self-contained SVG line charts of per-step metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{ExperimentError, MeanStd, RunResult, StepRecord};
use crate::acquisition::Strategy;

/// Reads one metric from a step record.
pub type Accessor = fn(&StepRecord) -> f64;

/// `(file stem, axis label, accessor, scale)` for every charted metric.
pub const CURVE_METRICS: [(&str, &str, Accessor, f64); 6] = [
    ("accuracy", "accuracy (%)", |r| r.accuracy, 100.0),
    (
        "predictive_parity",
        "predictive parity (%)",
        |r| r.predictive_parity,
        100.0,
    ),
    (
        "eq_odds_gap",
        "equalized odds gap (%)",
        |r| r.equalized_odds_gap,
        100.0,
    ),
    (
        "eq_opp_gap",
        "equal opportunity gap (%)",
        |r| r.equal_opportunity_gap,
        100.0,
    ),
    ("nll", "negative log-likelihood (nats)", |r| r.nll, 1.0),
    (
        "epistemic_gap",
        "epistemic gap between groups (nats)",
        |r| r.epistemic_gap,
        1.0,
    ),
];

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Closed interval padded by 5% of its span on each side. A zero span is
/// padded by 5% of the magnitude (or ±0.5 around zero).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisRange {
    pub min: f64,
    pub max: f64,
}

impl AxisRange {
    pub fn covering(lo: f64, hi: f64) -> Self {
        let span = hi - lo;
        let pad = if span > 0.0 {
            0.05 * span
        } else if lo != 0.0 {
            0.05 * lo.abs()
        } else {
            0.5
        };
        Self {
            min: lo - pad,
            max: hi + pad,
        }
    }

    fn map(&self, v: f64, from: f64, to: f64) -> f64 {
        from + (v - self.min) / (self.max - self.min) * (to - from)
    }
}

/// Seed-aggregated points of one `(strategy, λ)` series.
struct Series {
    label: String,
    /// `(n_labelled, mean, std)` sorted by `n_labelled`.
    points: Vec<(f64, f64, f64)>,
}

fn collect_series(runs: &[RunResult], value: fn(&StepRecord) -> f64, scale: f64) -> Vec<Series> {
    let mut keys: Vec<(Strategy, f64)> = Vec::new();
    for r in runs {
        if !keys.contains(&(r.strategy, r.lambda)) {
            keys.push((r.strategy, r.lambda));
        }
    }
    keys.into_iter()
        .map(|(strategy, lambda)| {
            let mut xs: Vec<usize> = runs
                .iter()
                .filter(|r| r.strategy == strategy && r.lambda == lambda)
                .flat_map(|r| r.records.iter().map(|s| s.n_labelled))
                .collect();
            xs.sort_unstable();
            xs.dedup();
            let points = xs
                .into_iter()
                .map(|x| {
                    let vals: Vec<f64> = runs
                        .iter()
                        .filter(|r| r.strategy == strategy && r.lambda == lambda)
                        .flat_map(|r| r.records.iter().filter(|s| s.n_labelled == x))
                        .map(|s| value(s) * scale)
                        .collect();
                    let ms = MeanStd::of(&vals).expect("x came from these records");
                    (x as f64, ms.mean, ms.std.unwrap_or(0.0))
                })
                .collect();
            Series {
                label: format!("{strategy} λ={lambda}"),
                points,
            }
        })
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Renders one metric chart. x is `n_labelled`, y the seed mean with a
/// shaded ±std band. The axis ranges are stored as `data-*` attributes on
/// the root element.
pub fn render_svg(
    title: &str,
    runs: &[RunResult],
    value: fn(&StepRecord) -> f64,
    scale: f64,
) -> String {
    let series = collect_series(runs, value, scale);
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, m, s) in all {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(m - s);
        y_hi = y_hi.max(m + s);
    }
    if !x_lo.is_finite() {
        (x_lo, x_hi, y_lo, y_hi) = (0.0, 1.0, 0.0, 1.0);
    }
    let xr = AxisRange::covering(x_lo, x_hi);
    let yr = AxisRange::covering(y_lo, y_hi);
    let (px0, px1) = (LEFT, WIDTH - RIGHT);
    let (py0, py1) = (HEIGHT - BOTTOM, TOP);
    let px = |x: f64| xr.map(x, px0, px1);
    let py = |y: f64| yr.map(y, py0, py1);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" data-x-min="{}" data-x-max="{}" data-y-min="{}" data-y-max="{}">"#,
        xr.min, xr.max, yr.min, yr.max
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="18" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        (px0 + px1) / 2.0,
        escape(title)
    );

    // axes and ticks
    let _ = writeln!(
        svg,
        r#"<g stroke="black" stroke-width="1"><line x1="{px0}" y1="{py0}" x2="{px1}" y2="{py0}"/><line x1="{px0}" y1="{py0}" x2="{px0}" y2="{py1}"/></g>"#
    );
    let _ = writeln!(
        svg,
        r#"<g font-family="sans-serif" font-size="11" fill="black">"#
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = xr.min + t * (xr.max - xr.min);
        let yv = yr.min + t * (yr.max - yr.min);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.0}</text>"#,
            px(xv),
            py0 + 16.0,
            xv
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
            px0 - 6.0,
            py(yv) + 4.0,
            yv
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">labelled samples</text>"#,
        (px0 + px1) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(svg, "</g>");

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            svg,
            r#"<g class="series" data-label="{}">"#,
            escape(&s.label)
        );
        if s.points.len() == 1 {
            let (x, m, _) = s.points[0];
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"/>"#,
                px(x),
                py(m)
            );
        } else {
            let upper = s.points.iter().map(|&(x, m, sd)| (px(x), py(m + sd)));
            let lower = s.points.iter().rev().map(|&(x, m, sd)| (px(x), py(m - sd)));
            let band: Vec<String> = upper
                .chain(lower)
                .map(|(x, y)| format!("{x:.2},{y:.2}"))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
                band.join(" ")
            );
            let line: Vec<String> = s
                .points
                .iter()
                .map(|&(x, m, _)| format!("{:.2},{:.2}", px(x), py(m)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                line.join(" ")
            );
        }
        let ly = TOP + 16.0 * i as f64 + 10.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11">{}</text>"#,
            px1 + 12.0,
            px1 + 30.0,
            px1 + 36.0,
            ly + 4.0,
            escape(&s.label)
        );
        let _ = writeln!(svg, "</g>");
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `<dir>/<metric>.svg` for every metric in [`CURVE_METRICS`].
pub fn write_curves(runs: &[RunResult], dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    if runs.iter().all(|r| r.records.is_empty()) {
        return Err(ExperimentError::Format("no step records to plot".into()));
    }
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ExperimentError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut written = Vec::new();
    for (stem, label, value, scale) in CURVE_METRICS {
        let path = dir.join(format!("{stem}.svg"));
        fs::write(&path, render_svg(label, runs, value, scale)).map_err(io(&path))?;
        written.push(path);
    }
    Ok(written)
}
