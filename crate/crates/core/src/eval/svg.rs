//! Small SVG 1.1 charts: a heatmap, a band chart and a bar chart.

use std::fmt::Write;

use super::population::DiversityCurve;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn open(out: &mut String, title: &str, tag: &str, w: f64, h: f64) {
    let _ = writeln!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<!-- {} -->
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">
<title>{}</title>
<rect width="{w}" height="{h}" fill="white"/>
<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        escape(tag),
        escape(title),
        w / 2.0,
        escape(title)
    );
}

/// White-to-blue colour for a value in [0, 1].
fn blue(v: f64) -> String {
    let v = v.clamp(0.0, 1.0);
    let r = (255.0 * (1.0 - 0.85 * v)) as u8;
    let g = (255.0 * (1.0 - 0.6 * v)) as u8;
    format!("rgb({r},{g},255)")
}

/// Heatmap of a square matrix with values in [0, 1]; `tag` goes in a
/// leading comment (used for the config hash).
pub fn heatmap(matrix: &[Vec<f64>], title: &str, row_label: &str, col_label: &str, tag: &str) -> String {
    let n = matrix.len().max(1);
    let cell = ((H - 2.0 * MARGIN) / n as f64).min(80.0);
    let w = 2.0 * MARGIN + cell * n as f64;
    let h = 2.0 * MARGIN + cell * n as f64;
    let mut out = String::new();
    open(&mut out, title, tag, w, h);
    for (i, row) in matrix.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let x = MARGIN + j as f64 * cell;
            let y = MARGIN + i as f64 * cell;
            let ink = if v > 0.6 { "white" } else { "black" };
            let _ = writeln!(
                out,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{cell:.1}" height="{cell:.1}" fill="{}" stroke="white"/>
<text x="{:.1}" y="{:.1}" text-anchor="middle" fill="{ink}">{v:.2}</text>"#,
                blue(v),
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{i}</text>"#,
            MARGIN - 6.0,
            MARGIN + (i as f64 + 0.5) * cell + 4.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{i}</text>"#,
            MARGIN + (i as f64 + 0.5) * cell,
            MARGIN - 6.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">{}</text>
<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>
</svg>"#,
        h / 2.0,
        h / 2.0,
        escape(row_label),
        w / 2.0,
        h - 16.0,
        escape(col_label)
    );
    out
}

fn axes(out: &mut String, y_max: f64, y_label: &str, x_label: &str) {
    let _ = writeln!(
        out,
        r#"<line x1="{MARGIN}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{}" stroke="black"/>"#,
        H - MARGIN,
        W - MARGIN,
        H - MARGIN,
        H - MARGIN
    );
    for t in 0..=4 {
        let v = y_max * t as f64 / 4.0;
        let y = H - MARGIN - (H - 2.0 * MARGIN) * t as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            MARGIN - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">{}</text>
<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label),
        W / 2.0,
        H - 16.0,
        escape(x_label)
    );
}

/// Mean line with a shaded min-max band and std error bars per iteration.
pub fn band_chart(curve: &DiversityCurve, title: &str, tag: &str) -> String {
    let mut out = String::new();
    open(&mut out, title, tag, W, H);
    let y_max = 1.0;
    axes(&mut out, y_max, &curve.metric, "iteration");
    let n = curve.points.len().max(1);
    let x = |i: usize| MARGIN + (W - 2.0 * MARGIN) * (i as f64 + 0.5) / n as f64;
    let y = |v: f64| H - MARGIN - (H - 2.0 * MARGIN) * (v / y_max).clamp(0.0, 1.0);
    if !curve.points.is_empty() {
        let mut band = String::new();
        for (i, p) in curve.points.iter().enumerate() {
            let _ = write!(band, "{:.1},{:.1} ", x(i), y(p.max));
        }
        for (i, p) in curve.points.iter().enumerate().rev() {
            let _ = write!(band, "{:.1},{:.1} ", x(i), y(p.min));
        }
        let _ = writeln!(
            out,
            r#"<polygon points="{}" fill="lightgray" stroke="none"/>"#,
            band.trim_end()
        );
        let line: Vec<String> = curve
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| format!("{:.1},{:.1}", x(i), y(p.mean)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="navy" stroke-width="2"/>"#,
            line.join(" ")
        );
    }
    for (i, p) in curve.points.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="steelblue" stroke-width="3"/>
<text x="{0:.1}" y="{3:.1}" text-anchor="middle" font-size="10">{4}</text>"#,
            x(i),
            y(p.mean - p.std),
            y(p.mean + p.std),
            H - MARGIN + 14.0,
            p.iteration
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Bars with error bars, in the given order.
pub fn bar_chart(bars: &[(String, f64, f64)], title: &str, y_label: &str, tag: &str) -> String {
    let mut out = String::new();
    open(&mut out, title, tag, W, H);
    let y_max = 1.0;
    axes(&mut out, y_max, y_label, "");
    let n = bars.len().max(1);
    let slot = (W - 2.0 * MARGIN) / n as f64;
    let y = |v: f64| H - MARGIN - (H - 2.0 * MARGIN) * (v / y_max).clamp(0.0, 1.0);
    for (i, (label, mean, std)) in bars.iter().enumerate() {
        let x0 = MARGIN + slot * i as f64 + slot * 0.15;
        let bw = slot * 0.7;
        let xc = x0 + bw / 2.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x0:.1}" y="{:.1}" width="{bw:.1}" height="{:.1}" fill="steelblue"/>
<line x1="{xc:.1}" y1="{:.1}" x2="{xc:.1}" y2="{:.1}" stroke="black"/>
<text x="{xc:.1}" y="{:.1}" text-anchor="middle">{}</text>
<text x="{xc:.1}" y="{:.1}" text-anchor="middle" font-size="10">{mean:.3}</text>"#,
            y(*mean),
            y(0.0) - y(*mean),
            y(mean - std),
            y(mean + std),
            H - MARGIN + 16.0,
            escape(label),
            y(mean + std) - 4.0
        );
    }
    out.push_str("</svg>\n");
    out
}
