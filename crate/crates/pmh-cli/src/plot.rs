//! Minimal self-contained SVG line plot of the convergence report.

use std::fmt::Write as _;

use pmh_core::{ConvergenceReport, Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 70.0;

/// Renders `log10 E` and `log10 W` against `log10 eps` as one polyline per
/// series with axis ticks at the sweep's scales.
pub fn convergence_svg(report: &ConvergenceReport) -> Result<String> {
    if report.rows.is_empty() {
        return Err(Error::config("cannot plot an empty report"));
    }
    let xs: Vec<f64> = report.rows.iter().map(|r| r.epsilon.log10()).collect();
    // Values can legitimately hit zero (stationary data); clamp to a floor
    // so the log plot stays finite.
    let floor = 1e-300;
    let es: Vec<f64> = report.rows.iter().map(|r| r.e_mean.max(floor).log10()).collect();
    let ws: Vec<f64> = report.rows.iter().map(|r| r.w_pairing.max(floor).log10()).collect();

    let (x_lo, x_hi) = span(&xs);
    let (y_lo, y_hi) = span(&[es.clone(), ws.clone()].concat());
    let map_x = |x: f64| MARGIN + (x - x_lo) / (x_hi - x_lo).max(1e-12) * (WIDTH - 2.0 * MARGIN);
    let map_y =
        |y: f64| HEIGHT - MARGIN - (y - y_lo) / (y_hi - y_lo).max(1e-12) * (HEIGHT - 2.0 * MARGIN);

    let polyline = |vals: &[f64]| -> String {
        let mut pts = String::new();
        for (x, y) in xs.iter().zip(vals) {
            let _ = write!(pts, "{:.2},{:.2} ", map_x(*x), map_y(*y));
        }
        pts.trim_end().to_string()
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        svg,
        r#"  <rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    // Axes.
    let _ = writeln!(
        svg,
        r#"  <line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black" stroke-width="1"/>"#,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    let _ = writeln!(
        svg,
        r#"  <line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black" stroke-width="1"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN
    );
    // Ticks and labels at each scale.
    for (row, x) in report.rows.iter().zip(&xs) {
        let px = map_x(*x);
        let _ = writeln!(
            svg,
            r#"  <line x1="{px:.2}" y1="{b:.2}" x2="{px:.2}" y2="{b2:.2}" stroke="black" stroke-width="1"/>"#,
            b = HEIGHT - MARGIN,
            b2 = HEIGHT - MARGIN + 6.0
        );
        let _ = writeln!(
            svg,
            r#"  <text x="{px:.2}" y="{ty:.2}" font-size="12" text-anchor="middle">{eps}</text>"#,
            ty = HEIGHT - MARGIN + 22.0,
            eps = row.epsilon
        );
    }
    let _ = writeln!(
        svg,
        r#"  <text x="{cx:.2}" y="{cy:.2}" font-size="13" text-anchor="middle">scale (log)</text>"#,
        cx = WIDTH / 2.0,
        cy = HEIGHT - 18.0
    );
    let _ = writeln!(
        svg,
        r#"  <text x="18" y="{cy:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 18 {cy:.2})">error (log)</text>"#,
        cy = HEIGHT / 2.0
    );
    // Series.
    let _ = writeln!(
        svg,
        r##"  <polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
        polyline(&es)
    );
    let _ = writeln!(
        svg,
        r##"  <polyline points="{}" fill="none" stroke="#d62728" stroke-width="2"/>"##,
        polyline(&ws)
    );
    // Legend.
    let _ = writeln!(
        svg,
        r##"  <text x="{x:.2}" y="{y:.2}" font-size="12" fill="#1f77b4">corrector L1 error E</text>"##,
        x = WIDTH - MARGIN - 160.0,
        y = MARGIN + 16.0
    );
    let _ = writeln!(
        svg,
        r##"  <text x="{x:.2}" y="{y:.2}" font-size="12" fill="#d62728">weak-star gap W</text>"##,
        x = WIDTH - MARGIN - 160.0,
        y = MARGIN + 34.0
    );
    let _ = writeln!(svg, "</svg>");
    Ok(svg)
}

fn span(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}
