//! Self-drawn SVG line charts of sweep results.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::sweep::{parse_results, SweepResult};
use crate::harness::write_atomic;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

/// Seed statistics of one sweep value.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub label: String,
    pub x: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

/// Aggregate final-epoch accuracies per sweep value. Numeric values are placed
/// at their value; otherwise values are spaced evenly in order of appearance.
pub fn plot_points(result: &SweepResult) -> Vec<PlotPoint> {
    let finals = result.final_rows();
    let mut labels: Vec<&str> = Vec::new();
    for r in &finals {
        if !labels.contains(&r.value.as_str()) {
            labels.push(&r.value);
        }
    }
    let numeric: Option<Vec<f64>> = labels.iter().map(|l| l.parse::<f64>().ok()).collect();
    let mut points: Vec<PlotPoint> = labels
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let accs: Vec<f64> = finals.iter().filter(|r| r.value == *label).filter_map(|r| r.knn_accuracy).collect();
            PlotPoint {
                label: label.to_string(),
                x: numeric.as_ref().map_or(i as f64, |v| v[i]),
                mean: accs.iter().sum::<f64>() / accs.len() as f64,
                min: accs.iter().copied().fold(f64::INFINITY, f64::min),
                max: accs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                n: accs.len(),
            }
        })
        .collect();
    if numeric.is_some() {
        points.sort_by(|a, b| a.x.total_cmp(&b.x));
    }
    points
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Render the chart. The output depends only on `result`.
pub fn render_svg(result: &SweepResult) -> String {
    let points = plot_points(result);
    let param = result.rows.first().map_or("value", |r| r.sweep_param.as_str());
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);

    let (mut xmin, mut xmax) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.x), b.max(p.x)));
    if points.is_empty() {
        (xmin, xmax) = (0.0, 1.0);
    }
    let xpad = if xmax > xmin { (xmax - xmin) * 0.08 } else { 0.5 };
    let (xmin, xmax) = (xmin - xpad, xmax + xpad);

    let lo = points.iter().map(|p| p.min).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.max).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if points.is_empty() { (0.0, 1.0) } else { (lo, hi) };
    let step = nice_step((hi - lo).max(0.02));
    let ymin = ((lo / step).floor() * step).max(0.0);
    let mut ymax = (hi / step).ceil() * step;
    if ymax <= ymin {
        ymax = ymin + step;
    }

    let sx = |x: f64| LEFT + (x - xmin) / (xmax - xmin) * pw;
    let sy = |y: f64| TOP + (1.0 - (y - ymin) / (ymax - ymin)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">kNN accuracy vs {}</text>"#,
        WIDTH / 2.0,
        escape(param)
    );

    // Axes.
    let (x0, y0, x1, y1) = (LEFT, TOP + ph, LEFT + pw, TOP);
    let _ = writeln!(s, r#"<line x1="{x0:.1}" y1="{y0:.1}" x2="{x1:.1}" y2="{y0:.1}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0:.1}" y1="{y0:.1}" x2="{x0:.1}" y2="{y1:.1}" stroke="black"/>"#);
    let mut y = ymin;
    while y <= ymax + step * 1e-6 {
        let py = sy(y);
        let _ = writeln!(s, r##"<line x1="{x0:.1}" y1="{py:.1}" x2="{x1:.1}" y2="{py:.1}" stroke="#dddddd"/>"##);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" class="ytick">{y:.3}</text>"#,
            x0 - 6.0,
            py + 4.0
        );
        y += step;
    }
    for p in &points {
        let px = sx(p.x);
        let _ = writeln!(s, r#"<line x1="{px:.1}" y1="{y0:.1}" x2="{px:.1}" y2="{:.1}" stroke="black"/>"#, y0 + 5.0);
        let _ = writeln!(
            s,
            r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle" class="xtick">{}</text>"#,
            y0 + 20.0,
            escape(&p.label)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 15.0,
        escape(param)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">kNN accuracy (seed mean, min/max)</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );

    // Series.
    if points.len() > 1 {
        let path: Vec<String> = points.iter().map(|p| format!("{:.1},{:.1}", sx(p.x), sy(p.mean))).collect();
        let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##, path.join(" "));
    }
    for p in &points {
        let (px, top, bot) = (sx(p.x), sy(p.max), sy(p.min));
        let _ = writeln!(s, r##"<line x1="{px:.1}" y1="{top:.1}" x2="{px:.1}" y2="{bot:.1}" stroke="#1f77b4"/>"##);
        for yy in [top, bot] {
            let _ = writeln!(
                s,
                r##"<line x1="{:.1}" y1="{yy:.1}" x2="{:.1}" y2="{yy:.1}" stroke="#1f77b4"/>"##,
                px - 4.0,
                px + 4.0
            );
        }
        let _ = writeln!(
            s,
            r##"<circle class="marker" cx="{px:.1}" cy="{:.1}" r="4" fill="#1f77b4"><title>{}: mean {:.4} over {} seeds</title></circle>"##,
            sy(p.mean),
            escape(&p.label),
            p.mean,
            p.n
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Read a sweep CSV and write its chart to `out`.
pub fn cmd_plot(csv: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(csv)?;
    let result = parse_results(&text)?;
    if result.final_rows().is_empty() {
        return Err(Error::Schema(format!("{} has no successful evaluated rows to plot", csv.display())));
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_atomic(out, render_svg(&result).as_bytes())
}
