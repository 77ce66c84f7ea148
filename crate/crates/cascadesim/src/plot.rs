//! Three stacked line charts drawn from `intervals.csv`: confidence
//! threshold, violation ratio and mean delivered quality over time.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use cascadesim_core::IntervalSnapshot;

use crate::output::{fmt_num, read_intervals};

const WIDTH: f64 = 720.0;
const PANEL: f64 = 200.0;
const MARGIN: f64 = 50.0;

/// Title, points and a fixed y range (`lo == hi` means fit to the data).
type Series<'a> = (&'a str, Vec<(f64, f64)>, (f64, f64));

pub fn plot_dir(dir: &Path, svg: &Path) -> Result<()> {
    let rows = read_intervals(dir)?;
    std::fs::write(svg, render_svg(&rows)).with_context(|| format!("metrics: writing {}", svg.display()))
}

pub fn render_svg(rows: &[IntervalSnapshot]) -> String {
    let series: [Series; 3] = [
        ("confidence threshold", points(rows, |s| Some(s.threshold())), (0.0, 1.0)),
        ("SLO violation ratio", points(rows, IntervalSnapshot::violation_ratio), (0.0, 1.0)),
        ("mean delivered quality", points(rows, IntervalSnapshot::mean_delivered_quality), (0.0, 0.0)),
    ];
    let height = 3.0 * (PANEL + MARGIN) + MARGIN;
    let x_max = rows.last().map_or(1.0, |s| s.interval_start).max(1.0);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, (title, pts, fixed)) in series.iter().enumerate() {
        let top = MARGIN + i as f64 * (PANEL + MARGIN);
        let (lo, hi) = if fixed.1 > fixed.0 { *fixed } else { value_range(pts) };
        let plot_w = WIDTH - 2.0 * MARGIN;
        let x = |t: f64| MARGIN + t / x_max * plot_w;
        let y = |v: f64| top + PANEL - (v - lo) / (hi - lo) * PANEL;
        let _ = writeln!(svg, r#"<text x="{MARGIN}" y="{}">{title}</text>"#, top - 8.0);
        let _ = writeln!(
            svg,
            r#"<rect x="{MARGIN}" y="{top}" width="{plot_w}" height="{PANEL}" fill="none" stroke="black"/>"#
        );
        for (v, anchor) in [(lo, top + PANEL), (hi, top)] {
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                MARGIN - 4.0,
                anchor + 4.0,
                fmt_num(v)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{} s</text>"#,
            WIDTH - MARGIN,
            top + PANEL + 16.0,
            fmt_num(x_max)
        );
        if !pts.is_empty() {
            let path: Vec<String> =
                pts.iter().map(|&(t, v)| format!("{:.2},{:.2}", x(t), y(v))).collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#,
                path.join(" ")
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn points(rows: &[IntervalSnapshot], f: impl Fn(&IntervalSnapshot) -> Option<f64>) -> Vec<(f64, f64)> {
    rows.iter().filter_map(|s| f(s).map(|v| (s.interval_start, v))).collect()
}

fn value_range(pts: &[(f64, f64)]) -> (f64, f64) {
    let lo = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-9 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}
