//! Static SVG figures. Output depends only on the inputs, so the same log
//! always produces the same bytes.

use std::fmt::Write;

use hopper_core::log::TrajectoryLog;

use crate::stats;
use crate::trial::HeightSchedule;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 360.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 32.0;
const BOTTOM: f64 = 48.0;
const MAX_POINTS: usize = 4000;

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }
}

/// Roughly `count` round tick values covering `[lo, hi]`.
pub fn nice_ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / count.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi - lo < 1e-9 {
        (lo - 0.05, hi + 0.05)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn open(svg: &mut String, title: &str) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(svg: &mut String, frame: &Frame, xlabel: &str, ylabel: &str, xticks: bool) {
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        svg,
        r#"<path d="M{x0:.1},{y1:.1} L{x0:.1},{y0:.1} L{x1:.1},{y0:.1}" fill="none" stroke="black"/>"#
    );
    for t in nice_ticks(frame.y.0, frame.y.1, 5) {
        let y = frame.py(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{x1:.1}" y2="{y:.1}" stroke="#dddddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
            x0,
            x0 - 6.0,
            y + 4.0,
            label(t)
        );
    }
    if xticks {
        for t in nice_ticks(frame.x.0, frame.x.1, 8) {
            let x = frame.px(t);
            let _ = writeln!(
                svg,
                r#"<line x1="{x:.1}" y1="{y0:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                y0 + 5.0,
                y0 + 18.0,
                label(t)
            );
        }
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 10.0,
        escape(xlabel)
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(16,{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

fn label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Base height against time, with the commanded height as a dashed step line
/// when a schedule is given.
pub fn base_height_svg(log: &TrajectoryLog, schedule: Option<&HeightSchedule>, title: &str) -> String {
    let mut svg = String::new();
    open(&mut svg, title);
    let (t0, t1) = match (log.rows.first(), log.rows.last()) {
        (Some(a), Some(b)) if b.t > a.t => (a.t, b.t),
        (Some(a), _) => (a.t, a.t + 1.0),
        _ => (0.0, 1.0),
    };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for r in &log.rows {
        lo = lo.min(r.q[0]);
        hi = hi.max(r.q[0]);
    }
    if let Some(s) = schedule {
        for &(_, h) in &s.segments {
            lo = lo.min(h);
            hi = hi.max(h);
        }
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    let frame = Frame {
        x: (t0, t1),
        y: padded(lo.min(0.0), hi),
    };
    axes(&mut svg, &frame, "time (s)", "base height (m)", true);

    if let Some(s) = schedule {
        let mut d = String::new();
        for (i, &(start, h)) in s.segments.iter().enumerate() {
            let end = s.segments.get(i + 1).map(|n| n.0).unwrap_or(t1).min(t1);
            let start = start.max(t0);
            if end <= start {
                continue;
            }
            let _ = write!(
                d,
                "{}{:.1},{:.1} L{:.1},{:.1} ",
                if d.is_empty() { "M" } else { "L" },
                frame.px(start),
                frame.py(h),
                frame.px(end),
                frame.py(h)
            );
        }
        let _ = writeln!(
            svg,
            r##"<path d="{}" fill="none" stroke="#d62728" stroke-dasharray="6 4"/>"##,
            d.trim_end()
        );
    }

    let stride = log.rows.len().div_ceil(MAX_POINTS).max(1);
    let mut points = String::new();
    for r in log.rows.iter().step_by(stride) {
        let _ = write!(points, "{:.1},{:.1} ", frame.px(r.t), frame.py(r.q[0]));
    }
    let _ = writeln!(
        svg,
        r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="1.2"/>"##,
        points.trim_end()
    );
    svg.push_str("</svg>\n");
    svg
}

/// One box of a distribution plot.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub label: String,
    pub command: Option<f64>,
    pub values: Vec<f64>,
}

/// Box plots of jump heights with the individual jumps overlaid and each
/// command marked by a dashed line.
pub fn distribution_svg(groups: &[Group], title: &str) -> String {
    let mut svg = String::new();
    open(&mut svg, title);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for g in groups {
        for &v in g.values.iter().chain(g.command.iter()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    let n = groups.len().max(1) as f64;
    let frame = Frame {
        x: (0.0, n),
        y: padded(lo, hi),
    };
    axes(&mut svg, &frame, "command", "jump height (m)", false);
    let half = 0.25 * (frame.px(1.0) - frame.px(0.0));
    for (i, g) in groups.iter().enumerate() {
        let cx = frame.px(i as f64 + 0.5);
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            HEIGHT - BOTTOM + 18.0,
            escape(&g.label)
        );
        if let Some(c) = g.command {
            let y = frame.py(c);
            let _ = writeln!(
                svg,
                r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#d62728" stroke-dasharray="6 4"/>"##,
                cx - 1.6 * half,
                cx + 1.6 * half
            );
        }
        if g.values.is_empty() {
            continue;
        }
        let s = stats::sorted(&g.values);
        let [q1, q2, q3] = stats::quartiles(&s);
        let (min, max) = (s[0], s[s.len() - 1]);
        let _ = writeln!(
            svg,
            r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
            frame.py(max),
            frame.py(min)
        );
        let _ = writeln!(
            svg,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#c6dbef" stroke="black"/>"##,
            cx - half,
            frame.py(q3),
            2.0 * half,
            (frame.py(q1) - frame.py(q3)).max(0.5)
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black" stroke-width="2"/>"#,
            cx - half,
            frame.py(q2),
            cx + half,
            frame.py(q2)
        );
        for (k, &v) in g.values.iter().enumerate() {
            let jitter = ((k * 37) % 17) as f64 / 16.0 - 0.5;
            let _ = writeln!(
                svg,
                r##"<circle cx="{:.1}" cy="{:.1}" r="2" fill="#1f77b4" fill-opacity="0.6"/>"##,
                cx + jitter * half,
                frame.py(v)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}
