//! Minimal SVG charts for reports: line charts and histograms.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            name: name.into(),
            points,
        }
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    log_x: bool,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let (x, lo, hi) = if self.log_x {
            (x.log10(), self.x.0.log10(), self.x.1.log10())
        } else {
            (x, self.x.0, self.x.1)
        };
        let span = if hi > lo { hi - lo } else { 1.0 };
        MARGIN + (x - lo) / span * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn header(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>
"#,
        WIDTH / 2.0,
        escape(title),
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(x_label),
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label),
    );
}

fn axes(out: &mut String, frame: &Frame, x_ticks: &[f64]) {
    let (x0, x1) = (MARGIN, WIDTH - MARGIN);
    let (y0, y1) = (HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(
        out,
        r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#
    );
    for i in 0..=4 {
        let v = frame.y.0 + (frame.y.1 - frame.y.0) * i as f64 / 4.0;
        let y = frame.py(v);
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{y:.1}" x2="{x0}" y2="{y:.1}" stroke="black"/><text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            x0 - 4.0,
            x0 - 6.0,
            y + 4.0,
            tick_label(v)
        );
    }
    for &v in x_ticks {
        let x = frame.px(v);
        let _ = writeln!(
            out,
            r#"<line x1="{x:.1}" y1="{y0}" x2="{x:.1}" y2="{}" stroke="black"/><text x="{x:.1}" y="{}" text-anchor="middle">{}</text>"#,
            y0 + 4.0,
            y0 + 18.0,
            tick_label(v)
        );
    }
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Polyline chart with markers. With `log_x`, x values must be positive.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], log_x: bool) -> String {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let x = bounds(all().map(|p| p.0).filter(|&x| !log_x || x > 0.0));
    let (y_lo, y_hi) = bounds(all().map(|p| p.1));
    let frame = Frame {
        x,
        y: (y_lo.min(0.0), y_hi * 1.05),
        log_x,
    };
    let mut ticks: Vec<f64> = all().map(|p| p.0).collect();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    if ticks.len() > 12 {
        ticks = (0..=4).map(|i| x.0 + (x.1 - x.0) * i as f64 / 4.0).collect();
    }

    let mut out = String::new();
    header(&mut out, title, x_label, y_label);
    axes(&mut out, &frame, &ticks);
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.1.is_finite() && (!log_x || p.0 > 0.0))
            .map(|&(x, y)| format!("{:.1},{:.1}", frame.px(x), frame.py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" stroke="{color}" stroke-width="1.5" fill="none"/>"#,
            pts.join(" ")
        );
        if s.points.len() <= 50 {
            for p in &pts {
                let (cx, cy) = p.split_once(',').expect("formatted above");
                let _ = writeln!(out, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#);
            }
        }
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{ly}">{}</text>"#,
            WIDTH - MARGIN - 120.0,
            ly - 9.0,
            WIDTH - MARGIN - 106.0,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Bars over consecutive `edges`; `counts.len() + 1 == edges.len()`.
pub fn histogram_chart(title: &str, x_label: &str, edges: &[f64], counts: &[u64]) -> String {
    let frame = Frame {
        x: (edges.first().copied().unwrap_or(0.0), edges.last().copied().unwrap_or(1.0)),
        y: (0.0, counts.iter().copied().max().unwrap_or(1).max(1) as f64 * 1.05),
        log_x: false,
    };
    let mut out = String::new();
    header(&mut out, title, x_label, "count");
    let ticks: Vec<f64> = (0..=4).map(|i| frame.x.0 + (frame.x.1 - frame.x.0) * i as f64 / 4.0).collect();
    axes(&mut out, &frame, &ticks);
    for (w, &c) in edges.windows(2).zip(counts) {
        let (x0, x1) = (frame.px(w[0]), frame.px(w[1]));
        let y = frame.py(c as f64);
        let _ = writeln!(
            out,
            r##"<rect x="{x0:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="#1f77b4" stroke="white"/>"##,
            (x1 - x0).max(0.5),
            (HEIGHT - MARGIN - y).max(0.0)
        );
    }
    out.push_str("</svg>\n");
    out
}
