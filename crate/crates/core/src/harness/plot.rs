//! Minimal SVG figures: archive scatter, metric curves and training trace.

use crate::archive::UnstructuredArchive;
use crate::arena::{Pose, ZoneMap};
use crate::harness::io::{MetricsRow, TraceRow};
use std::f64::consts::PI;
use std::fmt::Write;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 48.0;

/// Affine map from a square data window onto the plot area.
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    w: f64,
    h: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * self.w
    }

    fn py(&self, y: f64) -> f64 {
        MARGIN + (self.y1 - y) / (self.y1 - self.y0) * self.h
    }

    fn scale(&self) -> f64 {
        self.w / (self.x1 - self.x0)
    }
}

fn header(out: &mut String, w: f64, h: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, w / 2.0);
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<rect class="axes" x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        f.w, f.h
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = f.x0 + t * (f.x1 - f.x0);
        let yv = f.y0 + t * (f.y1 - f.y0);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            f.px(xv),
            MARGIN + f.h + 14.0,
            tick(xv)
        );
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, MARGIN - 4.0, f.py(yv) + 4.0, tick(yv));
    }
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x_label}</text>"#, MARGIN + f.w / 2.0, MARGIN + f.h + 30.0);
    let _ = writeln!(
        out,
        r#"<text x="12" y="{:.1}" text-anchor="middle" transform="rotate(-90 12 {:.1})">{y_label}</text>"#,
        MARGIN + f.h / 2.0,
        MARGIN + f.h / 2.0
    );
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn zone_circles(out: &mut String, f: &Frame, z: &ZoneMap, origin: [f64; 2]) {
    let (cx, cy) = (f.px(origin[0]), f.py(origin[1]));
    for (r, colour) in [(z.r_recovery, "#f2c14e"), (z.r_exploration, "#5aa469")] {
        let _ = writeln!(
            out,
            r#"<circle class="zone" cx="{cx:.2}" cy="{cy:.2}" r="{:.2}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            r * f.scale()
        );
    }
}

/// Fitness in [−π, 0] mapped from dark blue (worst) to yellow (best).
fn fitness_colour(f: f64) -> String {
    let t = (1.0 + f / PI).clamp(0.0, 1.0);
    let r = (40.0 + t * 213.0) as u8;
    let g = (30.0 + t * 201.0) as u8;
    let b = (120.0 - t * 84.0) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn square_frame(extent: f64) -> Frame {
    Frame { x0: -extent, x1: extent, y0: -extent, y1: extent, w: SIZE - 2.0 * MARGIN, h: SIZE - 2.0 * MARGIN }
}

/// Behaviour descriptors coloured by fitness; one `class="point"` marker per
/// archive member. Zone circles give the spatial scale.
pub fn archive_svg(archive: &UnstructuredArchive, zones: &ZoneMap) -> String {
    let extent = archive
        .solutions()
        .iter()
        .map(|s| s.bd[0].abs().max(s.bd[1].abs()))
        .fold(zones.r_recovery, f64::max)
        * 1.05;
    let f = square_frame(extent);
    let mut out = String::new();
    header(&mut out, SIZE, SIZE, &format!("Archive ({} solutions)", archive.len()));
    axes(&mut out, &f, "bd x [m]", "bd y [m]");
    zone_circles(&mut out, &f, zones, [0.0, 0.0]);
    for s in archive.solutions() {
        let _ = writeln!(
            out,
            r#"<circle class="point" cx="{:.2}" cy="{:.2}" r="3" fill="{}"><title>id {} fitness {:.3}</title></circle>"#,
            f.px(s.bd[0]),
            f.py(s.bd[1]),
            fitness_colour(s.fitness),
            s.id,
            s.fitness
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Coverage, best fitness and QD score against the evaluation count, one
/// panel each; every panel spans `[1, real_evals]` on the x axis.
pub fn metrics_svg(rows: &[MetricsRow], real_evals: usize) -> String {
    let x1 = real_evals.max(2) as f64;
    let series: [(&str, Box<dyn Fn(&MetricsRow) -> f64>); 3] = [
        ("coverage", Box::new(|r: &MetricsRow| r.coverage)),
        ("max fitness", Box::new(|r: &MetricsRow| r.max_fitness)),
        ("QD score", Box::new(|r: &MetricsRow| r.qd_score)),
    ];
    let panel_h = 200.0;
    let height = MARGIN + series.len() as f64 * (panel_h + MARGIN) + 10.0;
    let mut out = String::new();
    header(&mut out, SIZE, height, "Archive metrics");
    for (i, (name, get)) in series.iter().enumerate() {
        let vals: Vec<f64> = rows.iter().map(get).filter(|v| v.is_finite()).collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (y0, y1) = if lo.is_finite() && hi > lo { (lo, hi) } else if lo.is_finite() { (lo - 1.0, lo + 1.0) } else { (0.0, 1.0) };
        let top = i as f64 * (panel_h + MARGIN);
        let f = Frame { x0: 1.0, x1, y0, y1, w: SIZE - 2.0 * MARGIN, h: panel_h };
        let _ = writeln!(out, r#"<g class="panel" data-metric="{name}" data-x-min="1" data-x-max="{real_evals}" transform="translate(0 {top})">"#);
        axes(&mut out, &f, "real evaluations", name);
        let pts: Vec<String> = rows
            .iter()
            .filter(|r| get(r).is_finite())
            .map(|r| format!("{:.2},{:.2}", f.px(r.eval as f64), f.py(get(r))))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(out, r##"<polyline class="series" fill="none" stroke="#1f77b4" stroke-width="1.5" points="{}"/>"##, pts.join(" "));
        }
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    out
}

/// World-frame path of the robot over the whole run with the zone circles.
pub fn trace_svg(trace: &[TraceRow], fallback: &[Pose], zones: &ZoneMap) -> String {
    let pts: Vec<[f64; 2]> =
        if trace.is_empty() { fallback.iter().map(|p| [p.x, p.y]).collect() } else { trace.iter().map(|r| [r.x, r.y]).collect() };
    let extent = pts
        .iter()
        .map(|p| (p[0] - zones.center[0]).abs().max((p[1] - zones.center[1]).abs()))
        .fold(zones.r_recovery, f64::max)
        * 1.05;
    let mut f = square_frame(extent);
    f.x0 += zones.center[0];
    f.x1 += zones.center[0];
    f.y0 += zones.center[1];
    f.y1 += zones.center[1];
    let mut out = String::new();
    header(&mut out, SIZE, SIZE, "Training trace");
    axes(&mut out, &f, "x [m]", "y [m]");
    zone_circles(&mut out, &f, zones, zones.center);
    let line: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", f.px(p[0]), f.py(p[1]))).collect();
    if !line.is_empty() {
        let _ = writeln!(
            out,
            r##"<polyline class="trace" fill="none" stroke="#444" stroke-width="0.8" points="{}"/>"##,
            line.join(" ")
        );
        let end = pts[pts.len() - 1];
        let _ = writeln!(out, r##"<circle class="end" cx="{:.2}" cy="{:.2}" r="4" fill="#d62728"/>"##, f.px(end[0]), f.py(end[1]));
    }
    out.push_str("</svg>\n");
    out
}
