//! Scatter of (surprisal, adjusted rating) with the fitted parabola.

use std::fmt::Write;

use crate::stats::QuadraticFitReport;

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 56.0;
pub const CURVE_POINTS: usize = 200;

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

/// `(s, ŷ)` samples of the fitted curve over the observed covariate range.
pub fn curve(report: &QuadraticFitReport, points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    (0..CURVE_POINTS)
        .map(|i| {
            let s = lo + (hi - lo) * i as f64 / (CURVE_POINTS - 1) as f64;
            (s, report.predict(s))
        })
        .collect()
}

pub fn render(report: &QuadraticFitReport, points: &[(f64, f64)], x_label: &str) -> String {
    let line = curve(report, points);
    let (x0, x1) = bounds(points.iter().map(|p| p.0));
    let (y0, y1) = bounds(points.iter().map(|p| p.1).chain(line.iter().map(|p| p.1)));
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN
    );
    for (v, label) in [(x0, x0), (x1, x1)] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{label:.3}</text>"#,
            px(v),
            H - MARGIN + 16.0
        );
    }
    for v in [y0, y1] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{v:.3}</text>"#,
            MARGIN - 4.0,
            py(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.2})">adjusted rating</text>"#,
        H / 2.0,
        H / 2.0
    );
    let _ = writeln!(s, r##"<g id="points" fill="#1f77b4" fill-opacity="0.5">"##);
    for (x, y) in points {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5"/>"#, px(*x), py(*y));
    }
    let _ = writeln!(s, "</g>");
    let path: Vec<String> = line.iter().map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
    let _ = writeln!(
        s,
        r##"<polyline id="fit" fill="none" stroke="#ff7f0e" stroke-width="2" points="{}"/>"##,
        path.join(" ")
    );
    if let Some(v) = report.vertex_s.filter(|v| *v >= x0 && *v <= x1) {
        let (vx, vy) = (px(v), py(report.predict(v)));
        let _ = writeln!(
            s,
            r##"<g id="vertex"><line x1="{vx:.2}" y1="{MARGIN}" x2="{vx:.2}" y2="{:.2}" stroke="#d62728" stroke-dasharray="4 3"/><circle cx="{vx:.2}" cy="{vy:.2}" r="5" fill="#d62728"/></g>"##,
            H - MARGIN
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::quadratic_fit;

    #[test]
    fn one_circle_per_point() {
        let pts: Vec<(f64, f64)> = (0..30).map(|i| (i as f64 / 10.0, -(i as f64 / 10.0 - 1.5).powi(2))).collect();
        let (x, y): (Vec<f64>, Vec<f64>) = pts.iter().cloned().unzip();
        let rep = quadratic_fit(&x, &y).unwrap();
        let svg = render(&rep, &pts, "s <nats>");
        assert_eq!(svg.matches("<circle").count(), 31);
        assert!(svg.contains("id=\"vertex\""));
        assert!(svg.contains("s &lt;nats&gt;"));
        assert_eq!(curve(&rep, &pts).len(), CURVE_POINTS);
    }
}
