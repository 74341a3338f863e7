//! Minimal SVG output: line plots, heat maps and polygons.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const M: f64 = 48.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Frame {
        let (x0, x1) = bounds(xs);
        let (y0, y1) = bounds(ys);
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        M + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * M)
    }

    fn py(&self, y: f64) -> f64 {
        H - M - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * M)
    }

    fn axes(&self, out: &mut String, xlabel: &str, ylabel: &str) {
        let (l, r, t, b) = (M, W - M, M, H - M);
        let _ = writeln!(out, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" stroke="black" fill="none"/>"#);
        for (x, anchor) in [(self.x0, "start"), (self.x1, "end")] {
            let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="{anchor}">{}</text>"#, self.px(x), b + 14.0, num(x));
        }
        for y in [self.y0, self.y1] {
            let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"#, l - 4.0, self.py(y) + 4.0, num(y));
        }
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#, W / 2.0, H - 10.0, esc(xlabel));
        let _ = writeln!(out, r#"<text x="12" y="{:.2}" font-size="12" transform="rotate(-90 12 {:.2})" text-anchor="middle">{}</text>"#, H / 2.0, H / 2.0, esc(ylabel));
    }
}

fn bounds(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for x in v.filter(|x| x.is_finite()) {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn num(x: f64) -> String {
    format!("{:.3}", x)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open() -> String {
    format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n")
}

/// Polyline of `(x, y)`; non-finite values break the line.
pub fn line_plot(points: &[(f64, f64)], xlabel: &str, ylabel: &str) -> String {
    let f = Frame::new(points.iter().map(|p| p.0), points.iter().map(|p| p.1));
    let mut out = open();
    f.axes(&mut out, xlabel, ylabel);
    let mut seg: Vec<String> = Vec::new();
    let flush = |seg: &mut Vec<String>, out: &mut String| {
        if !seg.is_empty() {
            let _ = writeln!(out, r#"<polyline points="{}" stroke="steelblue" fill="none"/>"#, seg.join(" "));
            seg.clear();
        }
    };
    for &(x, y) in points {
        if y.is_finite() {
            seg.push(format!("{:.2},{:.2}", f.px(x), f.py(y)));
        } else {
            flush(&mut seg, &mut out);
        }
    }
    flush(&mut seg, &mut out);
    out.push_str("</svg>\n");
    out
}

/// Grey-scale cells at `(x, y)` of side `cell`; non-finite values stay blank.
pub fn heat_map(cells: &[(f64, f64, f64)], cell: f64, xlabel: &str, ylabel: &str) -> String {
    let h = cell / 2.0;
    let f = Frame::new(
        cells.iter().flat_map(|c| [c.0 - h, c.0 + h]),
        cells.iter().flat_map(|c| [c.1 - h, c.1 + h]),
    );
    let (v0, v1) = bounds(cells.iter().map(|c| c.2));
    let mut out = open();
    f.axes(&mut out, xlabel, ylabel);
    for &(x, y, v) in cells {
        if !v.is_finite() {
            continue;
        }
        let g = (255.0 * (1.0 - (v - v0) / (v1 - v0))).round() as u8;
        let (a, b) = (f.px(x - h), f.py(y + h));
        let (w, ht) = (f.px(x + h) - a, f.py(y - h) - b);
        let _ = writeln!(out, r#"<rect x="{a:.2}" y="{b:.2}" width="{w:.2}" height="{ht:.2}" fill="rgb({g},{g},{g})"/>"#);
    }
    out.push_str("</svg>\n");
    out
}

/// Closed polygons (a two-point polygon is drawn as a segment).
pub fn polygons(polys: &[(&str, Vec<(f64, f64)>)], xlabel: &str, ylabel: &str) -> String {
    let all: Vec<(f64, f64)> = polys.iter().flat_map(|p| p.1.iter().copied()).chain([(0.0, 0.0)]).collect();
    let (x0, x1) = bounds(all.iter().map(|p| p.0));
    let (y0, y1) = bounds(all.iter().map(|p| p.1));
    let r = (x1 - x0).max(y1 - y0) / 2.0;
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let f = Frame { x0: cx - r * 1.6, x1: cx + r * 1.6, y0: cy - r, y1: cy + r };
    let mut out = open();
    f.axes(&mut out, xlabel, ylabel);
    for (color, p) in polys {
        let pts: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y))).collect();
        let tag = if p.len() <= 2 { "polyline" } else { "polygon" };
        let _ = writeln!(out, r#"<{tag} points="{}" stroke="{color}" fill="none"/>"#, pts.join(" "));
    }
    out.push_str("</svg>\n");
    out
}
