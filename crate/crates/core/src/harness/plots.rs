use std::fmt::Write;

use indexmap::IndexMap;

use crate::inference::FewShotReport;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 90.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn y_of(v: f64) -> f64 {
    TOP + (1.0 - v.clamp(0.0, 1.0)) * (H - TOP - BOTTOM)
}

fn frame(title: &str, out: &mut String) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>
"#,
        W / 2.0,
        esc(title)
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let y = y_of(v);
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"##,
            W - RIGHT,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.1}" stroke="black"/><line x1="{LEFT}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        H - BOTTOM,
        H - BOTTOM,
        W - RIGHT,
        H - BOTTOM
    );
}

/// Mean macro-F1 per shot level with a ±std band and the zero-shot score as a dashed line.
/// Skipped levels are left out.
pub fn fewshot_svg(report: &FewShotReport, title: &str) -> String {
    let mut out = String::new();
    frame(title, &mut out);
    let pts: Vec<(usize, f64, f64)> = report.levels.iter().filter_map(|l| Some((l.shots, l.mean?, l.std.unwrap_or(0.0)))).collect();
    let n = pts.len().max(1);
    let x_of = |i: usize| LEFT + (i as f64 + 0.5) * (W - LEFT - RIGHT) / n as f64;
    let zy = y_of(report.zero_shot);
    let _ = writeln!(
        out,
        r##"<line x1="{LEFT}" y1="{zy:.1}" x2="{:.1}" y2="{zy:.1}" stroke="#c33" stroke-dasharray="6 4"/><text x="{:.1}" y="{:.1}" text-anchor="end" fill="#c33">zero-shot {:.3}</text>"##,
        W - RIGHT,
        W - RIGHT,
        zy - 4.0,
        report.zero_shot
    );
    let mut path = String::new();
    for (i, &(shots, mean, std)) in pts.iter().enumerate() {
        let x = x_of(i);
        let _ = write!(path, "{}{x:.1},{:.1}", if i == 0 { "M" } else { " L" }, y_of(mean));
        let _ = writeln!(
            out,
            r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#36c"/><circle cx="{x:.1}" cy="{:.1}" r="3.5" fill="#36c"><title>{shots} shots: {mean:.4} ± {std:.4}</title></circle><text x="{x:.1}" y="{:.1}" text-anchor="middle">{shots}</text>"##,
            y_of(mean - std),
            y_of(mean + std),
            y_of(mean),
            H - BOTTOM + 16.0
        );
    }
    if !path.is_empty() {
        let _ = writeln!(out, r##"<path d="{path}" fill="none" stroke="#36c" stroke-width="2"/>"##);
    }
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">shots per class</text>"#, (LEFT + W - RIGHT) / 2.0, H - BOTTOM + 36.0);
    out.push_str("</svg>\n");
    out
}

/// One bar per class, in the given order.
pub fn per_class_svg(per_class: &IndexMap<String, f64>, title: &str) -> String {
    let mut out = String::new();
    frame(title, &mut out);
    let n = per_class.len().max(1);
    let slot = (W - LEFT - RIGHT) / n as f64;
    for (i, (name, &v)) in per_class.iter().enumerate() {
        let x = LEFT + i as f64 * slot + slot * 0.15;
        let y = y_of(v);
        let lx = x + slot * 0.35;
        let ly = H - BOTTOM + 12.0;
        let _ = writeln!(
            out,
            r##"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="#4a8"><title>{}: {v:.4}</title></rect><text x="{lx:.1}" y="{ly:.1}" text-anchor="end" transform="rotate(-40 {lx:.1} {ly:.1})">{}</text>"##,
            slot * 0.7,
            H - BOTTOM - y,
            esc(name),
            esc(name)
        );
    }
    out.push_str("</svg>\n");
    out
}
