//! Deterministic SVG rendering of diagrams.
//!
//! Output depends only on the input values: no timestamps, no hash-map
//! ordering, fixed number formatting.

use std::fmt::Write;

use crate::atlas::{BifCurve, Codim2Point, CurveKind, RegionGrid, Window, TAXONOMY};
use crate::branch::Branch;
use crate::cycles::{CycleFamily, CycleStability, PeriodCurve};

pub const STABLE_COLOR: &str = "#d62728";
pub const UNSTABLE_COLOR: &str = "#1f4fd6";

pub fn curve_color(kind: CurveKind) -> &'static str {
    match kind {
        CurveKind::Lp => "#0000ff",
        CurveKind::Hopf => "#ff0000",
        CurveKind::Lpc => "#00a000",
        CurveKind::Pd => "#00c8c8",
    }
}

const REGION_PALETTE: [&str; 13] = [
    "#f2f2f2", "#fde0c5", "#fcd5e5", "#e3d7f7", "#d5e8f7", "#cdeccd", "#f7efb5", "#e8f4d9", "#f9d9d9", "#d9f2f2",
    "#eadff0", "#fff0d0", "#dcdcf5",
];
const FLAGGED_COLOR: &str = "#999999";

fn region_color(label: &str) -> &'static str {
    TAXONOMY
        .iter()
        .position(|&l| l == label)
        .map_or(FLAGGED_COLOR, |i| REGION_PALETTE[i])
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;

/// Axes frame mapping data coordinates to the canvas.
struct Canvas {
    x: (f64, f64),
    y: (f64, f64),
    body: String,
}

fn num(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Canvas {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let fix = |r: (f64, f64)| {
            if r.0.is_finite() && r.1.is_finite() && r.1 > r.0 {
                r
            } else if r.0.is_finite() {
                (r.0 - 0.5, r.0 + 0.5)
            } else {
                (0.0, 1.0)
            }
        };
        Canvas { x: fix(x), y: fix(y), body: String::new() }
    }

    fn px(&self, v: f64) -> f64 {
        MARGIN + (v - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, v: f64) -> f64 {
        HEIGHT - MARGIN - (v - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }

    fn polyline(&mut self, pts: &[(f64, f64)], color: &str, width: f64, dashed: bool) {
        if pts.len() < 2 {
            return;
        }
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{},{}", num(self.px(x)), num(self.py(y)))).collect();
        let dash = if dashed { r#" stroke-dasharray="4,3""# } else { "" };
        let _ = writeln!(
            self.body,
            r#"<polyline fill="none" stroke="{color}" stroke-width="{width}"{dash} points="{}"/>"#,
            coords.join(" ")
        );
    }

    fn marker(&mut self, x: f64, y: f64, label: &str) {
        let (cx, cy) = (self.px(x), self.py(y));
        let _ = writeln!(self.body, r#"<circle cx="{}" cy="{}" r="3" fill="black"/>"#, num(cx), num(cy));
        let _ = writeln!(
            self.body,
            r#"<text x="{}" y="{}" font-size="11">{}</text>"#,
            num(cx + 5.0),
            num(cy - 5.0),
            escape(label)
        );
    }

    fn rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, color: &str) {
        let (a, b) = (self.px(x0), self.px(x1));
        let (c, d) = (self.py(y1), self.py(y0));
        let _ = writeln!(
            self.body,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{color}" stroke="none"/>"#,
            num(a),
            num(c),
            num(b - a),
            num(d - c)
        );
    }

    fn finish(self, title: &str, xlabel: &str, ylabel: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<defs><clipPath id="plot"><rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}"/></clipPath></defs>"#,
            WIDTH - 2.0 * MARGIN,
            HEIGHT - 2.0 * MARGIN
        );
        let _ = writeln!(s, r#"<g clip-path="url(#plot)">"#);
        s.push_str(&self.body);
        s.push_str("</g>\n");
        // frame, ticks and labels
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            WIDTH - 2.0 * MARGIN,
            HEIGHT - 2.0 * MARGIN
        );
        for k in 0..=5 {
            let t = k as f64 / 5.0;
            let xv = self.x.0 + t * (self.x.1 - self.x.0);
            let yv = self.y.0 + t * (self.y.1 - self.y.0);
            let (xp, yp) = (self.px(xv), self.py(yv));
            let _ = writeln!(
                s,
                r#"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="black"/><text x="{0}" y="{3}" font-size="11" text-anchor="middle">{4}</text>"#,
                num(xp),
                num(HEIGHT - MARGIN),
                num(HEIGHT - MARGIN + 5.0),
                num(HEIGHT - MARGIN + 18.0),
                tick(xv)
            );
            let _ = writeln!(
                s,
                r#"<line x1="{0}" y1="{2}" x2="{1}" y2="{2}" stroke="black"/><text x="{3}" y="{4}" font-size="11" text-anchor="end">{5}</text>"#,
                num(MARGIN - 5.0),
                num(MARGIN),
                num(yp),
                num(MARGIN - 8.0),
                num(yp + 4.0),
                tick(yv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">{}</text>"#,
            num(WIDTH / 2.0),
            num(HEIGHT - 15.0),
            escape(xlabel)
        );
        let _ = writeln!(
            s,
            r#"<text x="15" y="{}" font-size="13" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
            num(HEIGHT / 2.0),
            num(HEIGHT / 2.0),
            escape(ylabel)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="30" font-size="14" text-anchor="middle">{}</text>"#,
            num(WIDTH / 2.0),
            escape(title)
        );
        s.push_str("</svg>\n");
        s
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn padded(r: (f64, f64)) -> (f64, f64) {
    let pad = 0.05 * (r.1 - r.0);
    (r.0 - pad, r.1 + pad)
}

/// Operating diagram: region fill (optional), bifurcation curves colored
/// by type and labeled codimension-two points.
pub fn operating_diagram_svg(window: &Window, curves: &[BifCurve], codim2: &[Codim2Point], grid: Option<&RegionGrid>) -> String {
    let mut c = Canvas::new(window.s_in, window.d);
    if let Some(g) = grid {
        let dx = (g.window.s_in.1 - g.window.s_in.0) / g.nx as f64;
        let dy = (g.window.d.1 - g.window.d.0) / g.ny as f64;
        for iy in 0..g.ny {
            let mut ix = 0;
            while ix < g.nx {
                let cell = g.cell(ix, iy);
                let color = if cell.flagged { FLAGGED_COLOR } else { region_color(&cell.label) };
                let start = ix;
                while ix < g.nx && {
                    let o = g.cell(ix, iy);
                    (if o.flagged { FLAGGED_COLOR } else { region_color(&o.label) }) == color
                } {
                    ix += 1;
                }
                let x0 = g.window.s_in.0 + start as f64 * dx;
                let y0 = g.window.d.0 + iy as f64 * dy;
                c.rect(x0, y0, x0 + (ix - start) as f64 * dx, y0 + dy, color);
            }
        }
    }
    for curve in curves {
        let pts: Vec<(f64, f64)> = curve.samples.iter().map(|s| (s.s_in, s.d)).collect();
        c.polyline(&pts, curve_color(curve.kind), 1.5, false);
    }
    for p in codim2 {
        let label = if p.proxy { format!("{} (proxy)", p.kind.label()) } else { p.kind.label().to_string() };
        c.marker(p.s_in, p.d, &label);
    }
    c.finish("Operating diagram", "S_in", "D")
}

/// One-parameter diagram of `x1`: equilibria along the branch and the
/// maximum of `x1` over each cycle, stable in red and unstable in blue.
pub fn one_parameter_svg(branch: &Branch, families: &[CycleFamily]) -> String {
    let xs = bounds(
        branch
            .points
            .iter()
            .map(|p| p.param)
            .chain(families.iter().flat_map(|f| f.cycles.iter().map(|c| c.param))),
    );
    let ys = bounds(
        branch
            .points
            .iter()
            .map(|p| p.state.x1)
            .chain(families.iter().flat_map(|f| f.cycles.iter().map(cycle_peak)))
            .chain(std::iter::once(0.0)),
    );
    let mut c = Canvas::new(padded(xs), padded(ys));
    for run in split_runs(branch.points.iter().map(|p| ((p.param, p.state.x1), p.is_stable()))) {
        c.polyline(&run.0, if run.1 { STABLE_COLOR } else { UNSTABLE_COLOR }, 1.5, false);
    }
    for f in families {
        let pts = f.cycles.iter().map(|cy| ((cy.param, cycle_peak(cy)), cy.stability == CycleStability::Stable));
        for run in split_runs(pts) {
            c.polyline(&run.0, if run.1 { STABLE_COLOR } else { UNSTABLE_COLOR }, 1.0, true);
        }
    }
    for e in &branch.events {
        if let Some(x) = e.state {
            c.marker(e.param, x.x1, e.kind.label());
        }
    }
    let xlabel = branch.free.name();
    c.finish("One-parameter diagram", xlabel, "x1")
}

fn cycle_peak(c: &crate::cycles::LimitCycle) -> f64 {
    c.nodes.iter().map(|n| n.x1).fold(f64::NEG_INFINITY, f64::max)
}

/// Consecutive points grouped by a boolean attribute; runs share their
/// boundary point so the drawn curve is continuous.
fn split_runs(points: impl Iterator<Item = ((f64, f64), bool)>) -> Vec<(Vec<(f64, f64)>, bool)> {
    let mut runs: Vec<(Vec<(f64, f64)>, bool)> = Vec::new();
    for (p, flag) in points {
        match runs.last_mut() {
            Some((pts, f)) if *f == flag => pts.push(p),
            Some((pts, _)) => {
                let last = *pts.last().unwrap();
                runs.push((vec![last, p], flag));
            }
            None => runs.push((vec![p], flag)),
        }
    }
    runs
}

/// Period against the free parameter for labeled family parts.
pub fn period_svg(curves: &[PeriodCurve]) -> String {
    let xs = bounds(curves.iter().flat_map(|c| c.samples.iter().map(|s| s.0)));
    let ys = bounds(curves.iter().flat_map(|c| c.samples.iter().map(|s| s.1)).chain(std::iter::once(0.0)));
    let mut c = Canvas::new(padded(xs), padded(ys));
    for curve in curves {
        for run in split_runs(curve.samples.iter().map(|s| ((s.0, s.1), s.2))) {
            c.polyline(&run.0, if run.1 { STABLE_COLOR } else { UNSTABLE_COLOR }, 1.5, false);
        }
        if let Some(s) = curve.samples.last() {
            c.marker(s.0, s.1, &curve.label);
        }
    }
    c.finish("Period of limit cycles", "S_in", "T")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atlas::CurveSample;

    #[test]
    fn empty_input_gives_axes_only() {
        let svg = operating_diagram_svg(&Window::default(), &[], &[], None);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(!svg.contains("<polyline"));
        assert!(svg.contains("S_in"));
        let p = period_svg(&[]);
        assert!(p.contains("</svg>"));
    }

    #[test]
    fn colors_follow_curve_type() {
        let curve = |kind| BifCurve {
            kind,
            label: String::new(),
            samples: vec![
                serde_json::from_str::<CurveSample>(r#"{"s_in":1.0,"d":0.1}"#).unwrap(),
                serde_json::from_str::<CurveSample>(r#"{"s_in":2.0,"d":0.2}"#).unwrap(),
            ],
            markers: Vec::new(),
        };
        let curves = [curve(CurveKind::Lp), curve(CurveKind::Hopf), curve(CurveKind::Lpc), curve(CurveKind::Pd)];
        let svg = operating_diagram_svg(&Window::default(), &curves, &[], None);
        for color in ["#0000ff", "#ff0000", "#00a000", "#00c8c8"] {
            assert!(svg.contains(&format!(r#"stroke="{color}""#)), "{color}");
        }
        assert_eq!(svg, operating_diagram_svg(&Window::default(), &curves, &[], None));
    }

    #[test]
    fn runs_share_boundaries() {
        let runs = split_runs([((0.0, 0.0), true), ((1.0, 1.0), true), ((2.0, 0.0), false)].into_iter());
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[1].0[0], (1.0, 1.0));
    }
}
