//! Plain SVG plots: scatter with density contours, histogram with density
//! curve, and heatmap. Output depends only on the inputs, so reports are
//! byte-reproducible.

use std::fmt::Write;

use diamond_core::{Matrix, Vector};

const SIZE: f64 = 640.0;
const MARGIN: f64 = 60.0;
/// Points drawn per series; larger sets are truncated, not resampled.
const MAX_POINTS: usize = 3000;
const CONTOUR_GRID: usize = 96;
const CONTOUR_LEVELS: [f64; 5] = [0.05, 0.2, 0.4, 0.6, 0.8];
const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Series<'a> {
    pub label: &'a str,
    pub points: &'a [Vector],
}

/// Affine map from data coordinates to the plot area.
#[derive(Clone, Copy)]
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (SIZE - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        SIZE - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (SIZE - 2.0 * MARGIN)
    }
}

/// Range covering the 0.5% to 99.5% quantiles, padded by 10%.
fn robust_range(values: &mut [f64]) -> (f64, f64) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return (-1.0, 1.0);
    }
    let mut sorted = finite;
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize];
    let (lo, hi) = (q(0.005), q(0.995));
    let pad = 0.1 * (hi - lo).max(1e-6);
    (lo - pad, hi + pad)
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="30" text-anchor="middle" font-size="15">{}</text>"#,
        SIZE / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, frame: &Frame, x_label: &str, y_label: &str) {
    let (l, r, t, b) = (MARGIN, SIZE - MARGIN, MARGIN, SIZE - MARGIN);
    let _ = writeln!(out, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#, r - l, b - t);
    for k in 0..=4 {
        let fx = frame.x.0 + (frame.x.1 - frame.x.0) * k as f64 / 4.0;
        let fy = frame.y.0 + (frame.y.1 - frame.y.0) * k as f64 / 4.0;
        let (x, y) = (frame.px(fx), frame.py(fy));
        let _ = writeln!(out, r#"<line x1="{x:.2}" y1="{b}" x2="{x:.2}" y2="{}" stroke="black"/>"#, b + 5.0);
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{fx:.2}</text>"#, b + 20.0);
        let _ = writeln!(out, r#"<line x1="{}" y1="{y:.2}" x2="{l}" y2="{y:.2}" stroke="black"/>"#, l - 5.0);
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{fy:.2}</text>"#, l - 8.0, y + 4.0);
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        SIZE / 2.0,
        SIZE - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        SIZE / 2.0,
        escape(y_label)
    );
}

fn legend(out: &mut String, labels: &[&str]) {
    for (i, label) in labels.iter().enumerate() {
        let y = MARGIN + 15.0 + 18.0 * i as f64;
        let x = SIZE - MARGIN - 150.0;
        let _ = writeln!(out, r#"<circle cx="{x}" cy="{}" r="4" fill="{}"/>"#, y - 4.0, PALETTE[i % PALETTE.len()]);
        let _ = writeln!(out, r#"<text x="{}" y="{y}">{}</text>"#, x + 10.0, escape(label));
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Scatter of the first two coordinates, with contours of `density` when
/// given.
pub fn scatter(title: &str, series: &[Series], density: Option<&dyn Fn(f64, f64) -> f64>) -> String {
    let mut xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p[0])).collect();
    let mut ys: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p[1])).collect();
    let frame = Frame { x: robust_range(&mut xs), y: robust_range(&mut ys) };
    let mut out = String::new();
    header(&mut out, title);
    if let Some(f) = density {
        contours(&mut out, &frame, f);
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(out, r#"<g fill="{color}" fill-opacity="0.35">"#);
        for p in s.points.iter().take(MAX_POINTS) {
            let (x, y) = (frame.px(p[0]), frame.py(p[1]));
            if (MARGIN..=SIZE - MARGIN).contains(&x) && (MARGIN..=SIZE - MARGIN).contains(&y) {
                let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.6"/>"#);
            }
        }
        let _ = writeln!(out, "</g>");
    }
    axes(&mut out, &frame, "x0", "x1");
    legend(&mut out, &series.iter().map(|s| s.label).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Marching-squares iso-lines of `f` over the frame, at fixed fractions of
/// the grid maximum.
fn contours(out: &mut String, frame: &Frame, f: &dyn Fn(f64, f64) -> f64) {
    let n = CONTOUR_GRID;
    let gx = |i: usize| frame.x.0 + (frame.x.1 - frame.x.0) * i as f64 / n as f64;
    let gy = |j: usize| frame.y.0 + (frame.y.1 - frame.y.0) * j as f64 / n as f64;
    let grid: Vec<Vec<f64>> = (0..=n).map(|i| (0..=n).map(|j| f(gx(i), gy(j))).collect()).collect();
    let peak = grid.iter().flatten().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    if peak <= 0.0 {
        return;
    }
    let _ = writeln!(out, r##"<g fill="none" stroke="#444" stroke-width="1" stroke-opacity="0.8">"##);
    for frac in CONTOUR_LEVELS {
        let level = frac * peak;
        let mut path = String::new();
        for i in 0..n {
            for j in 0..n {
                let corners = [
                    (gx(i), gy(j), grid[i][j]),
                    (gx(i + 1), gy(j), grid[i + 1][j]),
                    (gx(i + 1), gy(j + 1), grid[i + 1][j + 1]),
                    (gx(i), gy(j + 1), grid[i][j + 1]),
                ];
                let mut crossings = Vec::with_capacity(4);
                for e in 0..4 {
                    let (a, b) = (corners[e], corners[(e + 1) % 4]);
                    if (a.2 >= level) != (b.2 >= level) {
                        let w = (level - a.2) / (b.2 - a.2);
                        crossings.push((a.0 + w * (b.0 - a.0), a.1 + w * (b.1 - a.1)));
                    }
                }
                for pair in crossings.chunks_exact(2) {
                    let _ = write!(
                        path,
                        "M{:.2} {:.2}L{:.2} {:.2}",
                        frame.px(pair[0].0),
                        frame.py(pair[0].1),
                        frame.px(pair[1].0),
                        frame.py(pair[1].1)
                    );
                }
            }
        }
        if !path.is_empty() {
            let _ = writeln!(out, r#"<path d="{path}"/>"#);
        }
    }
    let _ = writeln!(out, "</g>");
}

/// Histograms of one-dimensional samples, with `density` overlaid.
pub fn histogram(title: &str, series: &[Series], density: Option<&dyn Fn(f64) -> f64>) -> String {
    const BINS: usize = 60;
    let mut xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p[0])).collect();
    let x = robust_range(&mut xs);
    let width = (x.1 - x.0) / BINS as f64;
    let counts: Vec<Vec<f64>> = series
        .iter()
        .map(|s| {
            let mut c = vec![0.0; BINS];
            for p in s.points {
                let k = ((p[0] - x.0) / width).floor();
                if k >= 0.0 && (k as usize) < BINS {
                    c[k as usize] += 1.0;
                }
            }
            let total = s.points.len().max(1) as f64 * width;
            c.iter().map(|v| v / total).collect()
        })
        .collect();
    let curve: Vec<(f64, f64)> = match density {
        Some(f) => (0..=200).map(|k| x.0 + (x.1 - x.0) * k as f64 / 200.0).map(|v| (v, f(v))).collect(),
        None => Vec::new(),
    };
    let top = counts.iter().flatten().chain(curve.iter().map(|c| &c.1)).copied().fold(1e-12, f64::max) * 1.1;
    let frame = Frame { x, y: (0.0, top) };
    let mut out = String::new();
    header(&mut out, title);
    for (i, c) in counts.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(out, r#"<g fill="{color}" fill-opacity="0.35">"#);
        for (k, h) in c.iter().enumerate() {
            let left = frame.px(x.0 + width * k as f64);
            let right = frame.px(x.0 + width * (k + 1) as f64);
            let y = frame.py(*h);
            let _ = writeln!(
                out,
                r#"<rect x="{left:.2}" y="{y:.2}" width="{:.2}" height="{:.2}"/>"#,
                right - left,
                frame.py(0.0) - y
            );
        }
        let _ = writeln!(out, "</g>");
    }
    if !curve.is_empty() {
        let points: Vec<String> =
            curve.iter().map(|(v, p)| format!("{:.2},{:.2}", frame.px(*v), frame.py(*p))).collect();
        let _ = writeln!(
            out,
            r##"<polyline fill="none" stroke="#444" stroke-width="1.5" points="{}"/>"##,
            points.join(" ")
        );
    }
    axes(&mut out, &frame, "x0", "density");
    legend(&mut out, &series.iter().map(|s| s.label).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Five-stop blue-to-yellow ramp for `v` in `[0, 1]`.
fn ramp(v: f64) -> String {
    const STOPS: [(f64, f64, f64); 5] =
        [(68.0, 1.0, 84.0), (59.0, 82.0, 139.0), (33.0, 145.0, 140.0), (94.0, 201.0, 98.0), (253.0, 231.0, 37.0)];
    let v = v.clamp(0.0, 1.0) * 4.0;
    let k = (v.floor() as usize).min(3);
    let w = v - k as f64;
    let (a, b) = (STOPS[k], STOPS[k + 1]);
    let mix = |p: f64, q: f64| (p + w * (q - p)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Heatmap of `values` (row per `ys` entry, column per `xs` entry) over
/// `[0, 1]^2`; NaN cells are grey.
pub fn heatmap(title: &str, x_label: &str, y_label: &str, xs: &[f64], ys: &[f64], values: &Matrix) -> String {
    let frame = Frame { x: (0.0, 1.0), y: (0.0, 1.0) };
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let edges = |grid: &[f64], k: usize| {
        let left = if k == 0 { 0.0 } else { 0.5 * (grid[k - 1] + grid[k]) };
        let right = if k + 1 == grid.len() { 1.0 } else { 0.5 * (grid[k] + grid[k + 1]) };
        (left, right)
    };
    let mut out = String::new();
    header(&mut out, title);
    for (i, _) in ys.iter().enumerate() {
        let (y0, y1) = edges(ys, i);
        for (j, _) in xs.iter().enumerate() {
            let (x0, x1) = edges(xs, j);
            let v = values[(i, j)];
            let fill = if v.is_finite() { ramp((v - lo) / span) } else { "#dddddd".to_string() };
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                frame.px(x0),
                frame.py(y1),
                frame.px(x1) - frame.px(x0) + 0.3,
                frame.py(y0) - frame.py(y1) + 0.3
            );
        }
    }
    axes(&mut out, &frame, x_label, y_label);
    for k in 0..=10 {
        let v = k as f64 / 10.0;
        let y = SIZE - MARGIN - v * (SIZE - 2.0 * MARGIN);
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{:.2}" width="12" height="{:.2}" fill="{}"/>"#,
            SIZE - 45.0,
            y - 28.0,
            28.5,
            ramp(v)
        );
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}">{hi:.2}</text>"#, SIZE - 30.0, MARGIN);
    let _ = writeln!(out, r#"<text x="{}" y="{}">{lo:.2}</text>"#, SIZE - 30.0, SIZE - MARGIN);
    out.push_str("</svg>\n");
    out
}
