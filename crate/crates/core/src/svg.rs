//! Minimal SVG scatter and line charts.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit<'a>(points: impl Iterator<Item = &'a (f64, f64)>) -> Frame {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in points.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        let pad = |a: f64, b: f64| if b - a < 1e-12 { (a - 0.5, b + 0.5) } else { (a - 0.05 * (b - a), b + 0.05 * (b - a)) };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * MARGIN)
    }
}

fn header(title: &str, xlabel: &str, ylabel: &str, f: &Frame) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>
<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>
"#,
        W / 2.0,
        escape(title),
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN,
        W / 2.0,
        H - 14.0,
        escape(xlabel),
        H / 2.0,
        H / 2.0,
        escape(ylabel),
    );
    for i in 0..=4 {
        let fx = f.x0 + (f.x1 - f.x0) * i as f64 / 4.0;
        let fy = f.y0 + (f.y1 - f.y0) * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, f.px(fx), H - MARGIN + 16.0, tick(fx));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, MARGIN - 4.0, f.py(fy) + 4.0, tick(fy));
    }
    s
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Scatter plot of named point sets.
pub fn scatter(title: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    let f = Frame::fit(series.iter().flat_map(|(_, p)| p.iter()));
    let mut s = header(title, "x0", "x1", &f);
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        for &(x, y) in pts.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="{color}" fill-opacity="0.5"/>"#, f.px(x), f.py(y));
        }
        legend(&mut s, i, name, color);
    }
    s.push_str("</svg>\n");
    s
}

/// Line chart of named series, each drawn with point markers.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    let f = Frame::fit(series.iter().flat_map(|(_, p)| p.iter()));
    let mut s = header(title, xlabel, ylabel, &f);
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, path.join(" "));
        for p in &path {
            let (x, y) = p.split_once(',').unwrap();
            let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
        }
        legend(&mut s, i, name, color);
    }
    s.push_str("</svg>\n");
    s
}

fn legend(s: &mut String, i: usize, name: &str, color: &str) {
    let y = MARGIN + 14.0 + 16.0 * i as f64;
    let x = W - MARGIN - 110.0;
    let _ = writeln!(s, r#"<rect x="{x}" y="{}" width="10" height="10" fill="{color}"/>"#, y - 9.0);
    let _ = writeln!(s, r#"<text x="{}" y="{y}">{}</text>"#, x + 14.0, escape(name));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn well_formed() {
        let s = line_chart("a < b", "k_c", "sliced_w", &[("mean", vec![(0.0, 1.0), (1.0, f64::NAN), (2.0, 0.5)])]);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("a &lt; b"));
        assert_eq!(s.matches("<polyline").count(), 1);
        let s = scatter("pts", &[("data", vec![(0.0, 0.0)]), ("gen", vec![(1.0, 1.0)])]);
        assert_eq!(s.matches("<circle").count(), 2);
    }
}
