//! SVG export: top-down root trajectories and per-frame root displacement
//! with seam frames marked.

use std::fmt::Write;

use choreo_core::GroupMotion;

const PANEL: f64 = 360.0;
const MARGIN: f64 = 30.0;
const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

fn bounds(points: impl Iterator<Item = (f64, f64)>) -> (f64, f64, f64, f64) {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let pad = |a: f64, b: f64| if b - a < 1e-9 { (a - 0.5, b + 0.5) } else { (a, b) };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);
    (x0, x1, y0, y1)
}

/// Largest root displacement over dancers between frames `l - 1` and `l`.
pub fn frame_displacements(motion: &GroupMotion) -> Vec<f64> {
    (1..motion.frames())
        .map(|l| {
            (0..motion.dancers())
                .map(|c| {
                    let (a, b) = (motion.root(c, l - 1), motion.root(c, l));
                    (0..3).map(|k| (b[k] - a[k]).powi(2)).sum::<f64>().sqrt()
                })
                .fold(0.0, f64::max)
        })
        .collect()
}

pub fn render_svg(motion: &GroupMotion, seams: &[usize]) -> String {
    let width = 2.0 * PANEL + 3.0 * MARGIN;
    let height = PANEL + 2.0 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);

    let all = (0..motion.dancers()).flat_map(|c| motion.roots(c)).map(|r| (r[0], r[2]));
    let (x0, x1, z0, z1) = bounds(all);
    let span = (x1 - x0).max(z1 - z0);
    let px = |x: f64| MARGIN + (x - x0) / span * PANEL;
    let pz = |z: f64| MARGIN + PANEL - (z - z0) / span * PANEL;
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="{}">root trajectories (x right, z up)</text>"#, MARGIN - 10.0);
    let _ = writeln!(s, r##"<rect x="{MARGIN}" y="{MARGIN}" width="{PANEL}" height="{PANEL}" fill="none" stroke="#888"/>"##);
    for c in 0..motion.dancers() {
        let pts: Vec<String> = motion.roots(c).iter().map(|r| format!("{:.2},{:.2}", px(r[0]), pz(r[2]))).collect();
        let color = COLORS[c % COLORS.len()];
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let start = motion.root(c, 0);
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(start[0]), pz(start[2]));
    }

    let disp = frame_displacements(motion);
    let left = 2.0 * MARGIN + PANEL;
    let top = disp.iter().copied().fold(0.0, f64::max).max(1e-9);
    let n = disp.len().max(1) as f64;
    let fx = |l: f64| left + (l - 1.0) / n * PANEL;
    let fy = |v: f64| MARGIN + PANEL - v / top * PANEL;
    let _ = writeln!(s, r#"<text x="{left}" y="{}">max root displacement per frame (max {top:.4} m)</text>"#, MARGIN - 10.0);
    let _ = writeln!(s, r##"<rect x="{left}" y="{MARGIN}" width="{PANEL}" height="{PANEL}" fill="none" stroke="#888"/>"##);
    for &seam in seams {
        let x = fx(seam as f64);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{MARGIN}" x2="{x:.2}" y2="{}" stroke="#bbb" stroke-dasharray="4 3"/>"##,
            MARGIN + PANEL
        );
    }
    let pts: Vec<String> = disp.iter().enumerate().map(|(i, v)| format!("{:.2},{:.2}", fx((i + 1) as f64), fy(*v))).collect();
    let _ = writeln!(s, r#"<polyline fill="none" stroke="black" stroke-width="1" points="{}"/>"#, pts.join(" "));
    s.push_str("</svg>\n");
    s
}
