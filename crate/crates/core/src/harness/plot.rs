//! Self-contained SVG line plots.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::IterationRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    ValueVsIter,
    LogLogGap,
    #[serde(rename = "trajectory2d", alias = "trajectory_2d")]
    Trajectory2D,
}

impl std::str::FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "value_vs_iter" => Ok(PlotKind::ValueVsIter),
            "log_log_gap" => Ok(PlotKind::LogLogGap),
            "trajectory2d" | "trajectory_2d" => Ok(PlotKind::Trajectory2D),
            other => Err(Error::UnsupportedKind(other.to_string())),
        }
    }
}

/// One polyline; `points` are in data coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl PlotSeries {
    /// `(k, f(xᵏ))`
    pub fn value_vs_iter(label: &str, trace: &[IterationRecord]) -> Self {
        Self { label: label.into(), points: trace.iter().map(|r| (r.k as f64, r.f_value)).collect() }
    }

    /// `(k, f(xᵏ) − f_∞)` for `k ≥ 1` and positive gaps.
    pub fn log_gap(label: &str, trace: &[IterationRecord], f_infinity: f64) -> Self {
        Self {
            label: label.into(),
            points: trace
                .iter()
                .filter(|r| r.k >= 1 && r.f_value - f_infinity > 0.0)
                .map(|r| (r.k as f64, r.f_value - f_infinity))
                .collect(),
        }
    }

    pub fn trajectory(label: &str, points: &[(f64, f64)]) -> Self {
        Self { label: label.into(), points: points.to_vec() }
    }
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;
const MAX_POINTS: usize = 4000;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = if log { v.log10() } else { v };
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if log {
            lo = lo.floor();
            hi = hi.ceil();
        }
        if hi - lo < 1e-12 * (1.0 + lo.abs()) {
            lo -= 0.5;
            hi += 0.5;
        }
        Self { lo, hi, log }
    }

    /// Position in `[0, 1]`.
    fn frac(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    /// Tick positions (in data units) with labels.
    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let decades = (self.hi - self.lo) as i64;
            let stride = (decades / 8).max(1);
            (self.lo as i64..=self.hi as i64)
                .step_by(stride as usize)
                .map(|e| (10f64.powi(e as i32), format!("1e{e}")))
                .collect()
        } else {
            let raw = (self.hi - self.lo) / 6.0;
            let mag = 10f64.powf(raw.log10().floor());
            let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
            let mut t = (self.lo / step).ceil() * step;
            let mut out = Vec::new();
            while t <= self.hi + 1e-9 * step {
                out.push((t, format_tick(t, step)));
                t += step;
            }
            out
        }
    }
}

fn format_tick(v: f64, step: f64) -> String {
    if v.abs() < 1e-12 * step {
        return "0".into();
    }
    if v.abs() >= 1e5 || v.abs() < 1e-3 {
        format!("{v:.1e}")
    } else {
        let decimals = (-step.log10().floor()).max(0.0) as usize;
        format!("{v:.decimals$}")
    }
}

/// Keeps at most `MAX_POINTS`, evenly spaced along the series (plus the last one).
fn decimate(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if points.len() <= MAX_POINTS {
        return points.to_vec();
    }
    let stride = points.len().div_ceil(MAX_POINTS);
    let mut out: Vec<_> = points.iter().step_by(stride).copied().collect();
    if out.last() != points.last() {
        out.push(*points.last().expect("nonempty"));
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders `series` as an SVG document.
pub fn emit_plot(series: &[PlotSeries], kind: PlotKind, title: &str) -> Result<String> {
    if series.is_empty() || series.iter().any(|s| s.points.is_empty()) {
        return Err(Error::EmptyTrace);
    }
    let (log_x, log_y, x_label, y_label) = match kind {
        PlotKind::ValueVsIter => (false, false, "iteration k", "f(x_k)"),
        PlotKind::LogLogGap => (true, true, "iteration k", "f(x_k) - f_inf"),
        PlotKind::Trajectory2D => (false, false, "x1", "x2"),
    };
    if log_x || log_y {
        for s in series {
            if s.points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
                return Err(Error::InvalidParameter(format!("series `{}` has non-positive values on a log axis", s.label)));
            }
        }
    }
    let xa = Axis::fit(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)), log_x);
    let ya = Axis::fit(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)), log_y);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |v: f64| LEFT + xa.frac(v) * pw;
    let py = |v: f64| TOP + (1.0 - ya.frac(v)) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(title));
    let _ = writeln!(svg, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for (v, label) in xa.ticks() {
        let x = px(v);
        let _ = writeln!(svg, r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#e0e0e0"/>"##, TOP + ph);
        let _ = writeln!(svg, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#, TOP + ph + 16.0);
    }
    for (v, label) in ya.ticks() {
        let y = py(v);
        let _ = writeln!(svg, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/>"##, LEFT + pw);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#, LEFT - 6.0, y + 4.0);
    }
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x_label}</text>"#, LEFT + pw / 2.0, HEIGHT - 18.0);
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{y_label}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = decimate(&s.points).iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(svg, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 24.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 30.0, ly + 4.0, escape(&s.label));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(n: usize, shift: f64) -> Vec<IterationRecord> {
        (0..n)
            .map(|k| IterationRecord {
                k,
                f_value: shift + 1.0 / (k as f64 + 1.0),
                step_alpha: 0.1,
                backtracks: 0,
                complementarity_residual: 0.0,
                v_norm_x: 0.0,
            })
            .collect()
    }

    #[test]
    fn two_series_loglog() {
        let a = PlotSeries::log_gap("HBA", &trace(300, 0.0), 0.0);
        let b = PlotSeries::log_gap("MD", &trace(300, 0.01), 0.0);
        let svg = emit_plot(&[a, b], PlotKind::LogLogGap, "gap").unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("1e-3") || svg.contains("1e-2"));
        assert!(svg.contains(">HBA<") && svg.contains(">MD<"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn empty_series_are_rejected() {
        assert_eq!(emit_plot(&[], PlotKind::ValueVsIter, "x"), Err(Error::EmptyTrace));
        let empty = PlotSeries::value_vs_iter("e", &[]);
        assert_eq!(emit_plot(&[empty], PlotKind::ValueVsIter, "x"), Err(Error::EmptyTrace));
    }

    #[test]
    fn log_axes_need_positive_data() {
        let s = PlotSeries::trajectory("t", &[(1.0, -1.0), (2.0, 1.0)]);
        assert!(emit_plot(std::slice::from_ref(&s), PlotKind::LogLogGap, "x").is_err());
        assert!(emit_plot(&[s], PlotKind::Trajectory2D, "x").is_ok());
    }

    #[test]
    fn deterministic_and_decimated() {
        let s = PlotSeries::value_vs_iter("long", &trace(100_000, 0.0));
        let a = emit_plot(std::slice::from_ref(&s), PlotKind::ValueVsIter, "t").unwrap();
        assert_eq!(a, emit_plot(&[s], PlotKind::ValueVsIter, "t").unwrap());
        assert!(a.len() < 200_000);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("log-log-gap".parse::<PlotKind>().unwrap(), PlotKind::LogLogGap);
        assert_eq!("trajectory2d".parse::<PlotKind>().unwrap(), PlotKind::Trajectory2D);
        assert!(matches!("pie".parse::<PlotKind>(), Err(Error::UnsupportedKind(_))));
    }
}
