//! Minimal self-contained SVG rendering for quick inspection of outputs.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const ML: f64 = 70.0;
const MR: f64 = 20.0;
const MT: f64 = 30.0;
const MB: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#7f7f7f"];
/// Longer series are thinned to roughly this many points.
const MAX_POINTS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Points,
}

pub struct Series<'a> {
    pub label: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub style: Style,
}

#[derive(Debug, Clone, Copy)]
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    log_y: bool,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        ML + (x - self.x0) / (self.x1 - self.x0) * (W - ML - MR)
    }

    fn py(&self, y: f64) -> f64 {
        let y = if self.log_y { y.log10() } else { y };
        H - MB - (y - self.y0) / (self.y1 - self.y0) * (H - MT - MB)
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-300 {
        let d = lo.abs().max(1.0) * 0.5;
        return (lo - d, hi + d);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e4).contains(&a) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

/// Scatter or line chart. With `log_y`, non-positive values are dropped.
pub fn chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series], log_y: bool) -> String {
    let tf = |y: f64| if log_y { y.log10() } else { y };
    let keep = |y: f64| y.is_finite() && (!log_y || y > 0.0);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for (&x, &y) in s.x.iter().zip(s.y) {
            if x.is_finite() && keep(y) {
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(tf(y));
                y1 = y1.max(tf(y));
            }
        }
    }
    let (x0, x1) = padded(x0, x1);
    let (y0, y1) = padded(y0, y1);
    let fr = Frame { x0, x1, y0, y1, log_y };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{ML}" y="{MT}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - ML - MR,
        H - MT - MB
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let (px, py) = (fr.px(fx), H - MB - (H - MT - MB) * k as f64 / 4.0);
        let ylab = if log_y { format!("1e{fy:.1}") } else { tick(fy) };
        let _ = writeln!(s, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, H - MB + 16.0, tick(fx));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{ylab}</text>"#, ML - 6.0, py + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(title));
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (W + ML) / 2.0, H - 10.0, esc(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        esc(ylabel)
    );

    for (k, ser) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let stride = (ser.x.len() / MAX_POINTS).max(1);
        let pts: Vec<(f64, f64)> = ser
            .x
            .iter()
            .zip(ser.y)
            .step_by(stride)
            .filter(|(x, y)| x.is_finite() && keep(**y))
            .map(|(&x, &y)| (fr.px(x), fr.py(y)))
            .collect();
        match ser.style {
            Style::Line => {
                let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#,
                    path.join(" ")
                );
            }
            Style::Points => {
                for (x, y) in pts {
                    let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="2" fill="{color}"/>"#);
                }
            }
        }
        if !ser.label.is_empty() {
            let ly = MT + 14.0 + 14.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{ly:.1}" text-anchor="end" fill="{color}">{}</text>"#,
                W - MR - 6.0,
                esc(ser.label)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Categorical grid: one coloured rectangle per cell, legend by category.
pub fn category_map(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    x: &[f64],
    y: &[f64],
    cat: impl Fn(usize, usize) -> usize,
    names: &[&str],
) -> String {
    let span = |v: &[f64]| {
        let lo = v.first().copied().unwrap_or(0.0);
        let hi = v.last().copied().unwrap_or(1.0);
        let half = if v.len() > 1 { 0.5 * (hi - lo) / (v.len() - 1) as f64 } else { 0.5 };
        (lo - half, hi + half, 2.0 * half)
    };
    let (x0, x1, dx) = span(x);
    let (y0, y1, dy) = span(y);
    let fr = Frame { x0, x1, y0, y1, log_y: false };
    let cw = (fr.px(x0 + dx) - fr.px(x0)).abs();
    let ch = (fr.py(y0) - fr.py(y0 + dy)).abs();

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    for (i, &xv) in x.iter().enumerate() {
        for (j, &yv) in y.iter().enumerate() {
            let c = COLORS[cat(i, j) % COLORS.len()];
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{cw:.1}" height="{ch:.1}" fill="{c}"/>"#,
                fr.px(xv) - cw / 2.0,
                fr.py(yv) - ch / 2.0
            );
        }
    }
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, fr.px(fx), H - MB + 16.0, tick(fx));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, ML - 6.0, fr.py(fy) + 4.0, tick(fy));
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(title));
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (W + ML) / 2.0, H - 10.0, esc(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        esc(ylabel)
    );
    for (k, name) in names.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="start" fill="{}">{}</text>"#,
            ML + 130.0 * k as f64,
            MT - 3.0,
            COLORS[k % COLORS.len()],
            esc(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_well_formed() {
        let x = [0.0, 1.0, 2.0];
        let y = [1.0, 10.0, 100.0];
        let svg = chart("t<1>", "x", "y", &[Series { label: "a", x: &x, y: &y, style: Style::Line }], true);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("t&lt;1&gt;"));
        assert_eq!(svg.matches("<polyline").count(), 1);
    }

    #[test]
    fn constant_and_empty_series_do_not_produce_nan() {
        let x = [0.0, 1.0];
        let y = [2.0, 2.0];
        let svg = chart("c", "x", "y", &[Series { label: "", x: &x, y: &y, style: Style::Points }], false);
        assert!(!svg.contains("NaN"));
        let svg = chart("e", "x", "y", &[], false);
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn category_map_cells() {
        let svg = category_map("m", "x", "y", &[0.0, 1.0], &[0.0, 1.0, 2.0], |i, j| i + j, &["a", "b"]);
        assert_eq!(svg.matches("<rect").count(), 1 + 6);
    }
}
