//! Dependency-free SVG rendering for the experiment outputs: line
//! plots, ECDF step plots, heatmaps, and histograms. Identical inputs
//! produce byte-identical files: coordinates use fixed precision and
//! nothing outside the arguments is consulted.

use crate::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

const W: f64 = 640.0;
const H: f64 = 420.0;
const ML: f64 = 66.0;
const MR: f64 = 24.0;
const MT: f64 = 42.0;
const MB: f64 = 52.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: &str, points: Vec<(f64, f64)>) -> Self {
        Series { name: name.to_string(), points }
    }
}

/// Pixel coordinate: two decimals keep the output stable and compact.
fn px(v: f64) -> String {
    format!("{v:.2}")
}

/// Tick label: up to three decimals with trailing zeros trimmed.
fn tick(v: f64) -> String {
    let mut s = format!("{v:.3}");
    while s.contains('.') && (s.ends_with('0') || s.ends_with('.')) {
        s.pop();
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn check_finite(series: &[Series]) -> Result<()> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::Input("plot needs at least one data point".into()));
    }
    for s in series {
        if s.points.iter().any(|&(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::Input(format!("series '{}' has a non-finite point", s.name)));
        }
    }
    Ok(())
}

/// Maps a data range to the drawable area; a degenerate range is
/// widened so the points land mid-plot instead of dividing by zero.
struct Scale {
    lo: f64,
    hi: f64,
    p0: f64,
    p1: f64,
}

impl Scale {
    fn new(lo: f64, hi: f64, p0: f64, p1: f64) -> Self {
        let (lo, hi) = if (hi - lo).abs() < 1e-12 { (lo - 1.0, hi + 1.0) } else { (lo, hi) };
        Scale { lo, hi, p0, p1 }
    }

    fn map(&self, v: f64) -> f64 {
        self.p0 + (v - self.lo) / (self.hi - self.lo) * (self.p1 - self.p0)
    }

    fn ticks(&self, n: usize) -> Vec<f64> {
        (0..n).map(|i| self.lo + (self.hi - self.lo) * i as f64 / (n - 1) as f64).collect()
    }
}

fn data_bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &(x, y) in &s.points {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    let pad = (y1 - y0).abs().max(1e-12) * 0.05;
    (x0, x1, y0 - pad, y1 + pad)
}

/// Shared chrome: background, plot frame, tick marks and labels, axis
/// titles, and the plot title.
fn frame(svg: &mut String, title: &str, x_label: &str, y_label: &str, sx: &Scale, sy: &Scale) {
    let _ = write!(
        svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif">"#
    );
    let _ = write!(svg, r##"<rect width="{W}" height="{H}" fill="#ffffff"/>"##);
    let _ = write!(
        svg,
        r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#333333"/>"##,
        px(ML),
        px(MT),
        px(W - ML - MR),
        px(H - MT - MB)
    );
    let _ = write!(
        svg,
        r##"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"##,
        px(W / 2.0),
        esc(title)
    );
    for t in sx.ticks(5) {
        let x = sx.map(t);
        let _ = write!(
            svg,
            r##"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="#333333"/>"##,
            px(x),
            px(H - MB),
            px(H - MB + 5.0)
        );
        let _ = write!(
            svg,
            r##"<text x="{}" y="{}" text-anchor="middle" font-size="11">{}</text>"##,
            px(x),
            px(H - MB + 18.0),
            tick(t)
        );
    }
    for t in sy.ticks(5) {
        let y = sy.map(t);
        let _ = write!(
            svg,
            r##"<line x1="{1}" y1="{0}" x2="{2}" y2="{0}" stroke="#333333"/>"##,
            px(y),
            px(ML - 5.0),
            px(ML)
        );
        let _ = write!(
            svg,
            r##"<text x="{}" y="{}" text-anchor="end" font-size="11">{}</text>"##,
            px(ML - 8.0),
            px(y + 4.0),
            tick(t)
        );
    }
    let _ = write!(
        svg,
        r##"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"##,
        px(ML + (W - ML - MR) / 2.0),
        px(H - 12.0),
        esc(x_label)
    );
    let _ = write!(
        svg,
        r##"<text x="16" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {})">{}</text>"##,
        px(MT + (H - MT - MB) / 2.0),
        px(MT + (H - MT - MB) / 2.0),
        esc(y_label)
    );
}

fn legend(svg: &mut String, series: &[Series]) {
    if series.len() < 2 {
        return;
    }
    for (i, s) in series.iter().enumerate() {
        let y = MT + 14.0 + 16.0 * i as f64;
        let color = PALETTE[i % PALETTE.len()];
        let _ = write!(
            svg,
            r##"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="{color}" stroke-width="2"/>"##,
            px(ML + 10.0),
            px(y),
            px(ML + 30.0)
        );
        let _ = write!(
            svg,
            r##"<text x="{}" y="{}" font-size="11">{}</text>"##,
            px(ML + 36.0),
            px(y + 4.0),
            esc(&s.name)
        );
    }
}

fn render_polylines(series: &[Series], step: bool, title: &str, xl: &str, yl: &str) -> String {
    let (x0, x1, y0, y1) = data_bounds(series);
    let sx = Scale::new(x0, x1, ML, W - MR);
    let sy = Scale::new(y0, y1, H - MB, MT);
    let mut svg = String::new();
    frame(&mut svg, title, xl, yl, &sx, &sy);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = String::new();
        let mut prev_y: Option<f64> = None;
        for &(x, y) in &s.points {
            if step {
                if let Some(py) = prev_y {
                    let _ = write!(pts, "{},{} ", px(sx.map(x)), px(sy.map(py)));
                }
                prev_y = Some(y);
            }
            let _ = write!(pts, "{},{} ", px(sx.map(x)), px(sy.map(y)));
        }
        let _ = write!(
            svg,
            r##"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"##,
            pts.trim_end()
        );
    }
    legend(&mut svg, series);
    svg.push_str("</svg>");
    svg
}

/// Line plot, one polyline per series; points are drawn in the order
/// given.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<String> {
    check_finite(series)?;
    Ok(render_polylines(series, false, title, x_label, y_label))
}

/// ECDF step plot: each series is rendered as horizontal-then-vertical
/// steps. Points must already be (value, cumulative fraction) sorted by
/// value, as `score_ecdf` produces.
pub fn ecdf_plot(title: &str, x_label: &str, series: &[Series]) -> Result<String> {
    check_finite(series)?;
    Ok(render_polylines(series, true, title, x_label, "cumulative fraction"))
}

/// Heatmap with per-cell value text. `values` is row-major and
/// rectangular; the color ramps from white (minimum) to a dark blue
/// (maximum).
pub fn heatmap(
    title: &str,
    row_labels: &[String],
    col_labels: &[String],
    values: &[Vec<f64>],
) -> Result<String> {
    if values.len() != row_labels.len()
        || values.iter().any(|r| r.len() != col_labels.len())
        || values.is_empty()
        || col_labels.is_empty()
    {
        return Err(Error::Input("heatmap labels must match a non-empty value grid".into()));
    }
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Input("heatmap has a non-finite value".into()));
    }
    let lo = values.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if (hi - lo).abs() < 1e-12 { 1.0 } else { hi - lo };
    let (nr, nc) = (values.len(), values[0].len());
    let cw = (W - ML - MR) / nc as f64;
    let ch = (H - MT - MB) / nr as f64;

    let mut svg = String::new();
    let _ = write!(
        svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif">"#
    );
    let _ = write!(svg, r##"<rect width="{W}" height="{H}" fill="#ffffff"/>"##);
    let _ = write!(
        svg,
        r##"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"##,
        px(W / 2.0),
        esc(title)
    );
    for (i, row) in values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let f = (v - lo) / span;
            // White #ffffff -> dark blue #08306b, linear per channel.
            let r = (255.0 + (8.0 - 255.0) * f).round() as u8;
            let g = (255.0 + (48.0 - 255.0) * f).round() as u8;
            let b = (255.0 + (107.0 - 255.0) * f).round() as u8;
            let x = ML + cw * j as f64;
            let y = MT + ch * i as f64;
            let _ = write!(
                svg,
                r##"<rect class="cell" x="{}" y="{}" width="{}" height="{}" fill="#{r:02x}{g:02x}{b:02x}" stroke="#999999"/>"##,
                px(x),
                px(y),
                px(cw),
                px(ch)
            );
            let text_color = if f > 0.55 { "#ffffff" } else { "#111111" };
            let _ = write!(
                svg,
                r##"<text x="{}" y="{}" text-anchor="middle" font-size="12" fill="{text_color}">{}</text>"##,
                px(x + cw / 2.0),
                px(y + ch / 2.0 + 4.0),
                tick(v)
            );
        }
    }
    for (j, label) in col_labels.iter().enumerate() {
        let _ = write!(
            svg,
            r##"<text x="{}" y="{}" text-anchor="middle" font-size="11">{}</text>"##,
            px(ML + cw * (j as f64 + 0.5)),
            px(H - MB + 16.0),
            esc(label)
        );
    }
    for (i, label) in row_labels.iter().enumerate() {
        let _ = write!(
            svg,
            r##"<text x="{}" y="{}" text-anchor="end" font-size="11">{}</text>"##,
            px(ML - 8.0),
            px(MT + ch * (i as f64 + 0.5) + 4.0),
            esc(label)
        );
    }
    svg.push_str("</svg>");
    Ok(svg)
}

/// Vertical bar chart over categorical x labels.
pub fn histogram(
    title: &str,
    x_label: &str,
    y_label: &str,
    bars: &[(String, f64)],
) -> Result<String> {
    if bars.is_empty() {
        return Err(Error::Input("histogram needs at least one bar".into()));
    }
    if bars.iter().any(|(_, v)| !v.is_finite() || *v < 0.0) {
        return Err(Error::Input("histogram values must be finite and non-negative".into()));
    }
    let hi = bars.iter().map(|&(_, v)| v).fold(0.0f64, f64::max).max(1e-12);
    let sy = Scale::new(0.0, hi * 1.05, H - MB, MT);
    let sx = Scale::new(0.0, bars.len() as f64, ML, W - MR);
    let mut svg = String::new();
    frame(&mut svg, title, x_label, y_label, &sx, &sy);
    let slot = (W - ML - MR) / bars.len() as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let x = ML + slot * i as f64 + slot * 0.125;
        let y = sy.map(*v);
        let _ = write!(
            svg,
            r##"<rect class="bar" x="{}" y="{}" width="{}" height="{}" fill="#1f77b4"/>"##,
            px(x),
            px(y),
            px(slot * 0.75),
            px((H - MB - y).max(0.0))
        );
        let _ = write!(
            svg,
            r##"<text x="{}" y="{}" text-anchor="middle" font-size="10">{}</text>"##,
            px(ML + slot * (i as f64 + 0.5)),
            px(H - MB + 30.0),
            esc(label)
        );
    }
    svg.push_str("</svg>");
    Ok(svg)
}

pub fn save_svg(path: &Path, svg: &str) -> Result<()> {
    std::fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_series() -> Vec<Series> {
        vec![
            Series::new("a", vec![(0.0, 1.0), (1.0, 3.0), (2.0, 2.0)]),
            Series::new("b", vec![(0.0, 0.5), (2.0, 2.5)]),
        ]
    }

    #[test]
    fn line_plot_is_deterministic_and_draws_every_series() {
        let s = demo_series();
        let one = line_plot("curves", "x", "y", &s).unwrap();
        let two = line_plot("curves", "x", "y", &s).unwrap();
        assert_eq!(one, two);
        assert_eq!(one.matches("<polyline").count(), 2);
        assert!(one.contains("curves") && one.contains(">a</text>"));
        assert!(one.starts_with("<svg") && one.ends_with("</svg>"));
    }

    #[test]
    fn ecdf_steps_double_the_interior_points() {
        let s = vec![Series::new("e", vec![(0.1, 0.25), (0.2, 0.5), (0.4, 1.0)])];
        let svg = ecdf_plot("ecdf", "score", &s).unwrap();
        let pts = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        // 3 points -> 3 + 2 interior step corners.
        assert_eq!(pts.split_whitespace().count(), 5);
    }

    #[test]
    fn rejects_empty_and_non_finite_input() {
        assert!(line_plot("t", "x", "y", &[]).is_err());
        let bad = vec![Series::new("n", vec![(0.0, f64::NAN)])];
        assert!(line_plot("t", "x", "y", &bad).is_err());
        assert!(histogram("t", "x", "y", &[("a".into(), -1.0)]).is_err());
    }

    #[test]
    fn heatmap_colors_span_the_value_range() {
        let rows = vec!["r0".to_string(), "r1".to_string()];
        let cols = vec!["c0".to_string(), "c1".to_string()];
        let vals = vec![vec![0.0, 0.5], vec![0.75, 1.0]];
        let svg = heatmap("transfer", &rows, &cols, &vals).unwrap();
        assert_eq!(svg.matches("class=\"cell\"").count(), 4);
        assert!(svg.contains("#ffffff") && svg.contains("#08306b"));
        assert!(heatmap("t", &rows, &cols, &[vec![1.0]]).is_err());
    }

    #[test]
    fn histogram_scales_bars_to_the_maximum() {
        let bars = vec![("0".to_string(), 4.0), ("1".to_string(), 2.0), ("2".to_string(), 0.0)];
        let svg = histogram("mix", "k", "flows", &bars).unwrap();
        assert_eq!(svg.matches("class=\"bar\"").count(), 3);
        let one = histogram("mix", "k", "flows", &bars).unwrap();
        assert_eq!(svg, one);
    }

    #[test]
    fn escapes_markup_in_labels() {
        let s = vec![Series::new("a<b", vec![(0.0, 0.0), (1.0, 1.0)])];
        let svg = line_plot("x < y & z", "in", "out", &s).unwrap();
        assert!(svg.contains("x &lt; y &amp; z"));
        assert!(!svg.contains("x < y"));
    }
}
