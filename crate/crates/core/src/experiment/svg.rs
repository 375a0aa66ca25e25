//! Static MAE-vs-percentage chart.

use std::fmt::Write;

use super::ExperimentReport;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

/// Mean MAE per percentage with ±1σ bars and the full model as a dashed
/// horizontal line.
pub(super) fn mae_curve(report: &ExperimentReport) -> String {
    let points: Vec<(f64, f64, f64)> = report
        .aggregates
        .iter()
        .filter_map(|a| a.p.map(|p| (p, a.mean_mae, a.std_mae.unwrap_or(0.0))))
        .collect();
    let baseline = report.baseline.as_ref().map(|b| b.mean_mae);

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(_, m, s) in &points {
        lo = lo.min(m - s);
        hi = hi.max(m + s);
    }
    if let Some(b) = baseline {
        lo = lo.min(b);
        hi = hi.max(b);
    }
    let pad = if hi > lo {
        0.08 * (hi - lo)
    } else {
        lo.abs().max(1.0) * 0.1
    };
    lo -= pad;
    hi += pad;

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |p: f64| LEFT + p / 100.0 * plot_w;
    let sy = |v: f64| TOP + (hi - v) / (hi - lo) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="15">Test MAE vs. percentage of samples used</text>"#,
        WIDTH / 2.0
    );
    // axes
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(
        s,
        r#"<path d="M{x0:.2},{y0:.2} L{x0:.2},{y1:.2} L{x1:.2},{y1:.2}" stroke="black" fill="none"/>"#
    );
    for tick in (0..=10).map(|i| f64::from(i * 10)) {
        let x = sx(tick);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{y1:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{tick}</text>"#,
            y1 + 5.0,
            y1 + 20.0
        );
    }
    for i in 0..=5 {
        let v = lo + (hi - lo) * f64::from(i) / 5.0;
        let y = sy(v);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            x0 - 5.0,
            x0 - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">Samples used (%)</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">MAE</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    if let Some(b) = baseline {
        let y = sy(b);
        let _ = writeln!(
            s,
            r##"<line x1="{x0:.2}" y1="{y:.2}" x2="{x1:.2}" y2="{y:.2}" stroke="#2a9d3a" stroke-dasharray="6 4"/><text x="{:.2}" y="{:.2}" text-anchor="end" fill="#2a9d3a">full model</text>"##,
            x1 - 4.0,
            y - 6.0
        );
    }

    let path: Vec<String> = points
        .iter()
        .map(|&(p, m, _)| format!("{:.2},{:.2}", sx(p), sy(m)))
        .collect();
    let _ = writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#c0392b" stroke-width="2"/>"##,
        path.join(" ")
    );
    for &(p, m, sd) in &points {
        let (x, ym, ya, yb) = (sx(p), sy(m), sy(m + sd), sy(m - sd));
        let _ = writeln!(
            s,
            r##"<path d="M{x:.2},{ya:.2} L{x:.2},{yb:.2} M{:.2},{ya:.2} L{:.2},{ya:.2} M{:.2},{yb:.2} L{:.2},{yb:.2}" stroke="#c0392b"/><circle cx="{x:.2}" cy="{ym:.2}" r="3.5" fill="#c0392b"/>"##,
            x - 4.0,
            x + 4.0,
            x - 4.0,
            x + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}
