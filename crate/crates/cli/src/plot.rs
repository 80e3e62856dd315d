//! Deterministic SVG figures.
//!
//! Output depends only on the data: no timestamps, no random ids, fixed
//! number formatting.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Calibration,
    Gain,
    Sensitivity,
    Step,
    ThetaScan,
}

impl PlotKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PlotKind::Calibration => "calibration",
            PlotKind::Gain => "gain",
            PlotKind::Sensitivity => "sensitivity",
            PlotKind::Step => "step",
            PlotKind::ThetaScan => "theta_scan",
        }
    }

    /// Allowed number of series: data plus an optional overlay.
    fn series_range(self) -> (usize, usize) {
        match self {
            PlotKind::Calibration | PlotKind::Step => (1, 2),
            PlotKind::Gain | PlotKind::Sensitivity | PlotKind::ThetaScan => (1, 1),
        }
    }

    fn default_labels(self) -> (&'static str, &'static str) {
        match self {
            PlotKind::Calibration => ("flux [Phi0]", "reflection angle [deg]"),
            PlotKind::Gain => ("flux [Phi0]", "gain [deg/Phi0]"),
            PlotKind::Sensitivity => ("flux [Phi0]", "sensitivity [Phi0]"),
            PlotKind::Step => ("time [ns]", "normalized step"),
            PlotKind::ThetaScan => ("time [ns]", "angle spread [deg]"),
        }
    }
}

impl FromStr for PlotKind {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Ok(match s {
            "calibration" => PlotKind::Calibration,
            "gain" => PlotKind::Gain,
            "sensitivity" => PlotKind::Sensitivity,
            "step" => PlotKind::Step,
            "theta_scan" | "theta-scan" => PlotKind::ThetaScan,
            other => return Err(CliError::Config(format!("unknown plot kind `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Markers,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub style: Style,
}

impl Series {
    pub fn line(label: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self { label: label.into(), x, y, style: Style::Line }
    }

    pub fn markers(label: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self { label: label.into(), x, y, style: Style::Markers }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub kind: PlotKind,
    pub title: String,
    pub series: Vec<Series>,
    pub log_y: bool,
}

impl PlotData {
    pub fn new(kind: PlotKind, title: impl Into<String>, series: Vec<Series>) -> Self {
        Self {
            kind,
            title: title.into(),
            series,
            log_y: kind == PlotKind::Sensitivity,
        }
    }

    fn check(&self) -> CliResult<()> {
        let (lo, hi) = self.kind.series_range();
        let n = self.series.len();
        if n < lo || n > hi {
            return Err(CliError::Data(format!(
                "{} plot takes {lo}..={hi} series, got {n}",
                self.kind.as_str()
            )));
        }
        for s in &self.series {
            if s.x.len() != s.y.len() {
                return Err(CliError::Data(format!(
                    "series `{}`: {} x values but {} y values",
                    s.label,
                    s.x.len(),
                    s.y.len()
                )));
            }
            if s.x.len() < 2 {
                return Err(CliError::Data(format!("series `{}` needs at least 2 points", s.label)));
            }
            if s.x.iter().chain(&s.y).any(|v| !v.is_finite()) {
                return Err(CliError::Data(format!("series `{}` has non-finite values", s.label)));
            }
            if self.log_y && s.y.iter().any(|v| *v <= 0.0) {
                return Err(CliError::Data(format!("series `{}`: log axis needs y > 0", s.label)));
            }
        }
        Ok(())
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 78.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 52.0;
const COLORS: [&str; 2] = ["#1f4e9c", "#c0392b"];

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let m = if f < 1.5 {
        1.0
    } else if f < 3.5 {
        2.0
    } else if f < 7.5 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn padded_range(lo: f64, hi: f64) -> (f64, f64) {
    if hi - lo > 0.0 {
        (lo, hi)
    } else {
        let d = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - d, hi + d)
    }
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = nice_step(hi - lo);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e5).contains(&a) {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{v:.1e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders `data` as an SVG document.
pub fn render_svg(data: &PlotData) -> CliResult<String> {
    data.check()?;
    let ty = |v: f64| if data.log_y { v.log10() } else { v };
    let all = data.series.iter().flat_map(|s| s.x.iter().copied().zip(s.y.iter().map(|v| ty(*v))));
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let (x0, x1) = padded_range(x0, x1);
    let (y0, y1) = padded_range(y0, y1);
    let (y0, y1) = (y0 - 0.04 * (y1 - y0), y1 + 0.04 * (y1 - y0));
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;
    let (xl, yl) = data.kind.default_labels();

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&data.title)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    );
    for t in ticks(x0, x1) {
        let x = px(t);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 18.0,
            tick_label(t)
        );
    }
    for t in ticks(y0, y1) {
        let y = py(t);
        let label = if data.log_y { format!("1e{}", tick_label(t)) } else { tick_label(t) };
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="#333"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT - 5.0,
            LEFT - 8.0,
            y + 4.0,
            label
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0,
        escape(xl)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(yl)
    );
    for (k, series) in data.series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts = series.x.iter().zip(&series.y).map(|(x, y)| (px(*x), py(ty(*y))));
        match series.style {
            Style::Line => {
                let mut d = String::new();
                for (j, (x, y)) in pts.enumerate() {
                    let _ = write!(d, "{}{x:.2},{y:.2}", if j == 0 { "M" } else { " L" });
                }
                let _ = writeln!(
                    s,
                    r#"<path id="series-{k}" d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#
                );
            }
            Style::Markers => {
                let _ = writeln!(s, r#"<g id="series-{k}" fill="{color}">"#);
                for (x, y) in pts {
                    let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5"/>"#);
                }
                let _ = writeln!(s, "</g>");
            }
        }
        let ly = TOP + 16.0 + 16.0 * k as f64;
        let lx = LEFT + pw - 150.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{ly:.2}">{}</text>"#,
            ly - 4.0,
            lx + 18.0,
            ly - 4.0,
            lx + 24.0,
            escape(&series.label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Writes the figure to `path`.
pub fn emit_plot(data: &PlotData, path: &Path) -> CliResult<()> {
    let svg = render_svg(data)?;
    std::fs::write(path, svg).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PlotData {
        let x: Vec<f64> = (0..50).map(|i| i as f64 * 0.01).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        PlotData::new(
            PlotKind::Calibration,
            "cal",
            vec![Series::markers("data", x.clone(), y.clone()), Series::line("fit", x, y)],
        )
    }

    #[test]
    fn identical_input_identical_output() {
        let a = render_svg(&sample()).unwrap();
        let b = render_svg(&sample()).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("series-1"));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut d = sample();
        d.series[0].y.pop();
        assert_eq!(render_svg(&d).unwrap_err().exit_code(), 3);
        let mut d = sample();
        d.kind = PlotKind::Gain;
        assert!(render_svg(&d).is_err());
    }

    #[test]
    fn nice_ticks() {
        let t: Vec<String> = ticks(0.0, 1.0).into_iter().map(tick_label).collect();
        assert_eq!(t, ["0", "0.2", "0.4", "0.6", "0.8", "1"]);
        assert_eq!(tick_label(0.25), "0.25");
        assert_eq!(tick_label(2e-4), "2.0e-4");
    }
}
