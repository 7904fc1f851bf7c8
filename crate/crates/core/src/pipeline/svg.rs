//! Minimal SVG charts for the report stage.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for (x, y) in points.filter(|p| p.0.is_finite() && p.1.is_finite()) {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            x1 = x0 + 1.0;
        }
        if y1 - y0 < 1e-12 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn open(out: &mut String, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>
"#,
        W / 2.0,
        esc(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let (bx, by) = (H - BOTTOM, LEFT);
    let _ = writeln!(
        out,
        r#"<line x1="{by}" y1="{bx}" x2="{}" y2="{bx}" stroke="black"/><line x1="{by}" y1="{TOP}" x2="{by}" y2="{bx}" stroke="black"/>"#,
        W - RIGHT
    );
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let xv = f.x0 + t * (f.x1 - f.x0);
        let yv = f.y0 + t * (f.y1 - f.y0);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.3}</text><text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.3}</text>"#,
            f.px(xv),
            bx + 16.0,
            by - 6.0,
            f.py(yv) + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text><text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 12.0,
        esc(x_label),
        (TOP + H - BOTTOM) / 2.0,
        (TOP + H - BOTTOM) / 2.0,
        esc(y_label)
    );
}

/// One polyline per series, with a legend.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> String {
    let f = Frame::fit(series.iter().flat_map(|s| s.1.iter().copied()));
    let mut out = String::new();
    open(&mut out, title);
    axes(&mut out, &f, x_label, y_label);
    for (k, (name, pts)) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#,
            path.join(" ")
        );
        let ly = TOP + 14.0 + 16.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{:.1}" y="{:.1}" width="10" height="10" fill="{colour}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            W - RIGHT - 160.0,
            ly - 9.0,
            W - RIGHT - 145.0,
            ly,
            esc(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Horizontal bars, drawn in the given order.
pub fn bar_chart(title: &str, x_label: &str, bars: &[(String, f64)]) -> String {
    let lo = bars.iter().map(|b| b.1).fold(0.0, f64::min);
    let hi = bars.iter().map(|b| b.1).fold(0.0, f64::max);
    let f = Frame::fit([(lo, 0.0), (hi, 1.0)].into_iter());
    let mut out = String::new();
    open(&mut out, title);
    let band = (H - TOP - BOTTOM) / bars.len().max(1) as f64;
    for (k, (name, v)) in bars.iter().enumerate() {
        let y = TOP + band * k as f64;
        let (a, b) = (f.px(0.0_f64.min(*v)), f.px(0.0_f64.max(*v)));
        let _ = writeln!(
            out,
            r#"<rect x="{a:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{}"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            y + band * 0.15,
            (b - a).max(0.5),
            band * 0.7,
            PALETTE[0],
            LEFT - 4.0,
            y + band * 0.6,
            esc(name)
        );
    }
    let _ = writeln!(
        out,
        r#"<line x1="{0:.1}" y1="{TOP}" x2="{0:.1}" y2="{1}" stroke="black"/><text x="{2:.1}" y="{3:.1}" text-anchor="middle">{4}</text>"#,
        f.px(0.0),
        H - BOTTOM,
        (LEFT + W - RIGHT) / 2.0,
        H - 12.0,
        esc(x_label)
    );
    out.push_str("</svg>\n");
    out
}

/// One row of points per feature: x is the attribution, colour runs from
/// blue (low feature value) to red (high). Vertical jitter is a fixed
/// function of the point index.
pub fn beeswarm(title: &str, rows: &[(String, Vec<(f64, f64)>)]) -> String {
    let f = Frame::fit(rows.iter().flat_map(|r| r.1.iter().map(|p| (p.0, 0.0))));
    let mut out = String::new();
    open(&mut out, title);
    let band = (H - TOP - BOTTOM) / rows.len().max(1) as f64;
    for (k, (name, pts)) in rows.iter().enumerate() {
        let cy = TOP + band * (k as f64 + 0.5);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            LEFT - 4.0,
            cy + 4.0,
            esc(name)
        );
        let (vlo, vhi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| {
            (a.0.min(p.1), a.1.max(p.1))
        });
        for (i, &(phi, v)) in pts.iter().enumerate() {
            let t = if vhi > vlo {
                (v - vlo) / (vhi - vlo)
            } else {
                0.5
            };
            let jitter = ((i * 37 % 17) as f64 / 16.0 - 0.5) * band * 0.6;
            let _ = writeln!(
                out,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="rgb({},{},{})" fill-opacity="0.8"/>"#,
                f.px(phi),
                cy + jitter,
                (255.0 * t) as u8,
                60,
                (255.0 * (1.0 - t)) as u8
            );
        }
    }
    let _ = writeln!(
        out,
        r#"<line x1="{0:.1}" y1="{TOP}" x2="{0:.1}" y2="{1}" stroke="gray"/><text x="{2:.1}" y="{3:.1}" text-anchor="middle">attribution</text>"#,
        f.px(0.0_f64.clamp(f.x0, f.x1)),
        H - BOTTOM,
        (LEFT + W - RIGHT) / 2.0,
        H - 12.0
    );
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed() {
        let l = line_chart(
            "roc",
            "fpr",
            "tpr",
            &[("a<b".into(), vec![(0.0, 0.0), (1.0, 1.0)])],
        );
        assert!(l.starts_with("<svg") && l.ends_with("</svg>\n"));
        assert!(l.contains("a&lt;b"));
        let b = bar_chart("delta", "auc", &[("x".into(), 0.1), ("y".into(), -0.02)]);
        assert_eq!(b.matches("<rect").count(), 3);
        let s = beeswarm("shap", &[("x".into(), vec![(0.1, 1.0), (-0.1, 0.0)])]);
        assert_eq!(s.matches("<circle").count(), 2);
    }
}
