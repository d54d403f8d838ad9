//! Minimal SVG scatter over the fixed viewport `[−4, 4]²`.

use std::fmt::Write;

use vaebm::Point;

const SIZE: f64 = 600.0;
const LIM: f64 = 4.0;

fn px(v: f64) -> f64 {
    (v + LIM) / (2.0 * LIM) * SIZE
}

fn py(v: f64) -> f64 {
    SIZE - px(v)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Samples as dots, mixture centers as red crosses. Points outside the
/// viewport are dropped.
pub fn scatter(points: &[Point], centers: &[Point], title: &str) -> String {
    let mut s = String::new();
    let h = SIZE + 30.0;
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{h}" viewBox="0 -30 {SIZE} {h}">"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{SIZE}" height="{SIZE}" fill="white" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="-10" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#, SIZE / 2.0, escape(title));
    let _ = writeln!(s, r##"<g fill="#1f4e9a" fill-opacity="0.35">"##);
    for p in points {
        if p[0].abs() <= LIM && p[1].abs() <= LIM {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.2"/>"#, px(p[0]), py(p[1]));
        }
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r##"<g stroke="#c0392b" stroke-width="1.5">"##);
    for c in centers {
        let (x, y) = (px(c[0]), py(c[1]));
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#, x - 5.0, y - 5.0, x + 5.0, y + 5.0);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#, x - 5.0, y + 5.0, x + 5.0, y - 5.0);
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}
