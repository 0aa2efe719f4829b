use std::fmt::Write as _;
use std::path::Path;

use crate::metrics::{read_rows, MetricsRow};
use crate::CliResult;

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 48.0;

struct Panel<'a> {
    title: &'a str,
    points: Vec<(f64, f64)>,
    y_range: Option<(f64, f64)>,
    color: &'a str,
}

fn extent(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return None;
    }
    Some(if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) })
}

fn draw_panel(svg: &mut String, x0: f64, p: &Panel) {
    let (w, h) = (PANEL_W - 2.0 * MARGIN, PANEL_H - 2.0 * MARGIN);
    let (left, top) = (x0 + MARGIN, MARGIN);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="14">{}</text>"#,
        left + w / 2.0,
        top - 16.0,
        p.title
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{left:.1}" y="{top:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="black"/>"#
    );
    let xs = extent(p.points.iter().map(|q| q.0));
    let ys = p.y_range.or_else(|| extent(p.points.iter().map(|q| q.1)));
    let (Some((x_lo, x_hi)), Some((y_lo, y_hi))) = (xs, ys) else {
        return;
    };
    for (v, y) in [(y_lo, top + h), (y_hi, top)] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10">{}</text>"#,
            left - 4.0,
            y + 3.0,
            fmt_tick(v)
        );
    }
    for (v, x) in [(x_lo, left), (x_hi, left + w)] {
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle" font-size="10">{}</text>"#,
            top + h + 14.0,
            fmt_tick(v)
        );
    }
    let sx = |x: f64| left + if x_hi > x_lo { (x - x_lo) / (x_hi - x_lo) * w } else { w / 2.0 };
    let sy = |y: f64| top + h - (y - y_lo) / (y_hi - y_lo) * h;
    let path: Vec<String> = p.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
    let _ = writeln!(
        svg,
        r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
        p.color,
        path.join(" ")
    );
    for &(x, y) in &p.points {
        let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{}"/>"#, sx(x), sy(y), p.color);
    }
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1000.0 || v == v.trunc() {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

/// Loss and success-rate curves side by side. The output depends only on
/// `rows`, so identical metrics give byte-identical files.
pub fn render_svg(rows: &[MetricsRow]) -> String {
    let loss = Panel {
        title: "training loss",
        points: rows.iter().map(|r| (r.step as f64, r.train_loss)).collect(),
        y_range: None,
        color: "#1f77b4",
    };
    let success = Panel {
        title: "eval success rate",
        points: rows
            .iter()
            .filter_map(|r| r.eval_success_rate.map(|s| (r.step as f64, s)))
            .collect(),
        y_range: Some((0.0, 1.0)),
        color: "#d62728",
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{PANEL_H:.0}" viewBox="0 0 {:.0} {PANEL_H:.0}">"#,
        2.0 * PANEL_W,
        2.0 * PANEL_W
    );
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    draw_panel(&mut svg, 0.0, &loss);
    draw_panel(&mut svg, PANEL_W, &success);
    svg.push_str("</svg>\n");
    svg
}

pub fn cmd_plot(metrics: &Path, out: &Path) -> CliResult<()> {
    let rows = read_rows(metrics)?;
    std::fs::write(out, render_svg(&rows))?;
    println!("plotted {} rows -> {}", rows.len(), out.display());
    Ok(())
}
