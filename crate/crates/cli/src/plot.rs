//! Static SVG rendering of a sweep table. Output depends only on the table,
//! so identical CSVs give byte-identical SVGs.

use std::fmt::Write as _;

use crate::config::{Curve, PlotStyle};
use crate::sweep::SweepTable;
use crate::CliError;

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 560.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 230.0;
const TOP: f64 = 48.0;
const BOTTOM: f64 = 64.0;

fn color(curve: Curve) -> (&'static str, &'static str) {
    match curve {
        Curve::Exact => ("#1f3b73", ""),
        Curve::Approx => ("#c0392b", ""),
        Curve::Reference => ("#555555", "2 4"),
        Curve::HighLimit => ("#2e8b57", "8 4"),
        Curve::LowLimit => ("#b8860b", "8 3 2 3"),
    }
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn map(&self, v: f64) -> Option<f64> {
        let t = if self.log {
            if !(v > 0.0) {
                return None;
            }
            v.log10()
        } else {
            v
        };
        t.is_finite().then(|| (t - self.lo) / (self.hi - self.lo))
    }

    /// Ticks as (position in axis units, label). A log axis spanning fewer
    /// than two decades falls back to round values in data units.
    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i64, self.hi.floor() as i64);
            if b > a {
                let stride = ((b - a) / 8 + 1).max(1);
                return (a..=b).filter(|k| (k - a) % stride == 0).map(|k| (k as f64, decade_label(k))).collect();
            }
            let (lo, hi) = (10f64.powf(self.lo), 10f64.powf(self.hi));
            return linear_ticks(lo, hi).into_iter().filter(|t| *t > 0.0).map(|t| (t.log10(), number_label(t))).collect();
        }
        linear_ticks(self.lo, self.hi).into_iter().map(|t| (t, number_label(t))).collect()
    }
}

fn linear_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn range(values: impl Iterator<Item = f64>, log: bool) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        let t = if log {
            if !(v > 0.0) {
                continue;
            }
            v.log10()
        } else {
            v
        };
        if t.is_finite() {
            lo = lo.min(t);
            hi = hi.max(t);
        }
    }
    if !lo.is_finite() {
        return None;
    }
    if hi - lo < 1e-12 * lo.abs().max(1.0) {
        let pad = if log { 0.5 } else { 0.5 * lo.abs().max(1.0) };
        return Some((lo - pad, hi + pad));
    }
    let pad = 0.05 * (hi - lo);
    Some((lo - pad, hi + pad))
}

fn decade_label(k: i64) -> String {
    let exp = if k < 0 { format!("\u{2212}{}", -k) } else { k.to_string() };
    format!("10<tspan dy=\"-7\" font-size=\"10\">{exp}</tspan>")
}

fn number_label(t: f64) -> String {
    let s = format!("{t:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.replace('-', "\u{2212}") }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the table. The y range is set by the bounded curves; the
/// first-order curve, which diverges as `sigma2 -> 0`, is clipped to it.
pub fn render_svg(table: &SweepTable, style: PlotStyle) -> Result<String, CliError> {
    if table.curves.is_empty() {
        return Err(CliError::Plot("no curves selected".into()));
    }
    if table.sigma2.len() < 2 {
        return Err(CliError::Plot(format!("need at least 2 rows, found {}", table.sigma2.len())));
    }
    let log_y = style == PlotStyle::LogLog;
    let (x_lo, x_hi) = range(table.sigma2.iter().copied(), true)
        .ok_or_else(|| CliError::Plot("sigma2 column has no positive values".into()))?;
    let framing: Vec<usize> = {
        let bounded: Vec<usize> = (0..table.curves.len()).filter(|&k| table.curves[k] != Curve::Approx).collect();
        if bounded.is_empty() { (0..table.curves.len()).collect() } else { bounded }
    };
    let (y_lo, y_hi) = range(framing.iter().flat_map(|&k| table.values[k].iter().copied()), log_y)
        .ok_or_else(|| CliError::Plot("no plottable values".into()))?;
    let x = Axis { lo: x_lo, hi: x_hi, log: true };
    let y = Axis { lo: y_lo, hi: y_hi, log: log_y };
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let px = |u: f64| LEFT + u * pw;
    let py = |v: f64| TOP + (1.0 - v) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="13">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<defs><clipPath id="plot-area"><rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}"/></clipPath></defs>"#
    );
    if let Some(name) = table.meta("name") {
        let _ = writeln!(s, r#"<text x="{:.2}" y="28" text-anchor="middle" font-size="15">{}</text>"#, LEFT + pw / 2.0, escape(name));
    }

    for (t, label) in x.ticks() {
        let gx = px((t - x.lo) / (x.hi - x.lo));
        let _ = writeln!(s, r##"<line x1="{gx:.2}" y1="{TOP}" x2="{gx:.2}" y2="{:.2}" stroke="#e4e4e4"/>"##, TOP + ph);
        let _ = writeln!(s, r#"<text x="{gx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, TOP + ph + 22.0, label);
    }
    for (t, label) in y.ticks() {
        let gy = py((t - y.lo) / (y.hi - y.lo));
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{gy:.2}" x2="{:.2}" y2="{gy:.2}" stroke="#e4e4e4"/>"##, LEFT + pw);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 8.0, gy + 4.0, label);
    }
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="15">σ₂</text>"#, LEFT + pw / 2.0, HEIGHT - 16.0);
    let _ = writeln!(
        s,
        r#"<text x="22" y="{:.2}" text-anchor="middle" font-size="15" transform="rotate(-90 22 {:.2})">σ*</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );

    let _ = writeln!(s, r#"<g clip-path="url(#plot-area)" fill="none" stroke-width="2">"#);
    for (k, &curve) in table.curves.iter().enumerate() {
        let (stroke, dash) = color(curve);
        let dash = if dash.is_empty() { String::new() } else { format!(r#" stroke-dasharray="{dash}""#) };
        // Unplottable points split the curve into separate polylines.
        let mut segments: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
        for (sx, sy) in table.sigma2.iter().zip(&table.values[k]) {
            match (x.map(*sx), y.map(*sy)) {
                (Some(u), Some(v)) => segments.last_mut().unwrap().push((px(u), py(v))),
                _ => {
                    if !segments.last().unwrap().is_empty() {
                        segments.push(Vec::new());
                    }
                }
            }
        }
        for seg in segments.iter().filter(|seg| !seg.is_empty()) {
            let points: Vec<String> = seg.iter().map(|(a, b)| format!("{a:.2},{b:.2}")).collect();
            let _ = writeln!(
                s,
                r#"<polyline class="{}" stroke="{stroke}"{dash} points="{}"/>"#,
                curve.column(),
                points.join(" ")
            );
        }
    }
    let _ = writeln!(s, "</g>");

    let lx = LEFT + pw + 18.0;
    let _ = writeln!(s, r#"<g class="legend">"#);
    for (k, &curve) in table.curves.iter().enumerate() {
        let (stroke, dash) = color(curve);
        let dash = if dash.is_empty() { String::new() } else { format!(r#" stroke-dasharray="{dash}""#) };
        let ly = TOP + 14.0 + 24.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{stroke}" stroke-width="2"{dash}/>"#,
            lx + 30.0
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 38.0, ly + 4.0, curve.label());
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    Ok(s)
}
