//! SVG renders: the map with one colour per drone, and simple line charts.

use std::collections::HashSet;
use std::fmt::Write as _;

use cslam::mapping_eval::GlobalMap;
use cslam::sim::{TrajectorySample, World};

pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

const PX_PER_M: f64 = 100.0;
const MARGIN: f64 = 20.0;

pub fn color(drone: u16) -> &'static str {
    PALETTE[drone as usize % PALETTE.len()]
}

/// Walls in grey, estimated trajectories as thin lines, map points as dots
/// (at most one dot per drone and pixel).
pub fn map_svg(world: &World, map: &GlobalMap, trajectories: &[TrajectorySample]) -> String {
    let (x0, y0, x1, y1) = world.bounds;
    let w = (x1 - x0) * PX_PER_M + 2.0 * MARGIN;
    let h = (y1 - y0) * PX_PER_M + 2.0 * MARGIN;
    let px = |x: f64| (x - x0) * PX_PER_M + MARGIN;
    let py = |y: f64| (y1 - y) * PX_PER_M + MARGIN;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for s in &world.segments {
        let _ = writeln!(
            out,
            r##"<line class="wall" x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#999" stroke-width="3"/>"##,
            px(s.a.0),
            py(s.a.1),
            px(s.b.0),
            py(s.b.1)
        );
    }
    let mut drones: Vec<u16> = trajectories.iter().map(|t| t.drone).collect();
    drones.sort_unstable();
    drones.dedup();
    for d in drones {
        let pts: Vec<String> = trajectories
            .iter()
            .filter(|t| t.drone == d)
            .map(|t| format!("{:.1},{:.1}", px(t.estimate.x), py(t.estimate.y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="trajectory" points="{}" fill="none" stroke="{}" stroke-width="1" stroke-opacity="0.5"/>"#,
            pts.join(" "),
            color(d)
        );
    }
    let mut drawn = HashSet::new();
    for p in &map.points {
        if !drawn.insert((p.drone, px(p.x).round() as i64, py(p.y).round() as i64)) {
            continue;
        }
        let _ = writeln!(
            out,
            r#"<circle class="point" cx="{:.1}" cy="{:.1}" r="1.5" fill="{}"/>"#,
            px(p.x),
            py(p.y),
            color(p.drone)
        );
    }
    out.push_str("</svg>\n");
    out
}

pub struct Series {
    pub name: String,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
    /// Dots instead of a line.
    pub dots: bool,
}

/// One chart panel, `width` x `height` pixels, placed at `(ox, oy)`.
pub fn chart(out: &mut String, origin: (f64, f64), size: (f64, f64), title: &str, y_label: &str, series: &[Series]) {
    let (ox, oy) = origin;
    let (width, height) = size;
    let left = 70.0;
    let bottom = 40.0;
    let top = 30.0;
    let right = 20.0;
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut xmin, mut xmax, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for (x, y) in all {
        xmin = xmin.min(*x);
        xmax = xmax.max(*x);
        ymax = ymax.max(*y);
    }
    if !xmin.is_finite() {
        (xmin, xmax) = (0.0, 1.0);
    }
    if xmax <= xmin {
        xmax = xmin + 1.0;
    }
    if ymax <= 0.0 {
        ymax = 1.0;
    }
    let pw = width - left - right;
    let ph = height - top - bottom;
    let px = |x: f64| ox + left + (x - xmin) / (xmax - xmin) * pw;
    let py = |y: f64| oy + top + ph - y / ymax * ph;

    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="14" font-family="sans-serif">{title}</text>"#,
        ox + left,
        oy + 18.0
    );
    let _ = writeln!(
        out,
        r#"<rect x="{:.1}" y="{:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="black"/>"#,
        ox + left,
        oy + top
    );
    for k in 0..=4 {
        let v = ymax * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" font-family="sans-serif" text-anchor="end">{}</text>"#,
            ox + left - 4.0,
            py(v) + 3.0,
            short(v)
        );
        let x = xmin + (xmax - xmin) * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" font-family="sans-serif" text-anchor="middle">{}</text>"#,
            px(x),
            oy + top + ph + 14.0,
            short(x)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" font-family="sans-serif" text-anchor="middle">N</text>"#,
        ox + left + pw / 2.0,
        oy + height - 6.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" font-family="sans-serif" transform="rotate(-90 {:.1} {:.1})" text-anchor="middle">{y_label}</text>"#,
        ox + 14.0,
        oy + top + ph / 2.0,
        ox + 14.0,
        oy + top + ph / 2.0
    );
    for (k, s) in series.iter().enumerate() {
        if s.dots {
            for (x, y) in &s.points {
                let _ = writeln!(
                    out,
                    r#"<circle class="series" cx="{:.1}" cy="{:.1}" r="3" fill="{}"/>"#,
                    px(*x),
                    py(*y),
                    s.color
                );
            }
        } else {
            let pts: Vec<String> = s.points.iter().map(|(x, y)| format!("{:.1},{:.1}", px(*x), py(*y))).collect();
            let _ = writeln!(
                out,
                r#"<polyline class="series" points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
                pts.join(" "),
                s.color
            );
        }
        let ly = oy + top + 14.0 + 14.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{ly:.1}" font-size="11" font-family="sans-serif" fill="{}">{}</text>"#,
            ox + left + 8.0,
            s.color,
            s.name
        );
    }
}

fn short(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1000.0 {
        format!("{:.0}", v)
    } else if v.abs() >= 10.0 {
        format!("{:.1}", v)
    } else {
        format!("{:.3}", v)
    }
}

pub fn svg_document(width: f64, height: f64, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}
