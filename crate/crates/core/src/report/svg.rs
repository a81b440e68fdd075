use std::fmt::Write;

use super::{pct, AnalysisRun, CenterBiasMap, UnitBar};
use crate::metrics::UnitCategory;

pub const CHART_WIDTH: f64 = 640.0;
pub const CHART_HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const PLOT_W: f64 = CHART_WIDTH - LEFT - RIGHT;
const PLOT_H: f64 = CHART_HEIGHT - TOP - BOTTOM;

pub(super) const BAR_WIDTH: f64 = 400.0;
const BAR_LEFT: f64 = 220.0;
const BAR_ROW: f64 = 24.0;
const BAR_HEIGHT: f64 = 18.0;

const STATIC_COLOR: &str = "#1f77b4";
const DYNAMIC_COLOR: &str = "#d62728";

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// XML comments may not contain `--`.
fn comment_safe(s: &str) -> String {
    let mut out = s.to_string();
    while out.contains("--") {
        out = out.replace("--", "- -");
    }
    out
}

fn open(out: &mut String, width: f64, height: f64, title: &str) {
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(out, "<title>{}</title>", escape(title)).unwrap();
}

fn data_comment(out: &mut String, table: &str) {
    writeln!(out, "<!-- data\n{}-->", comment_safe(table)).unwrap();
}

fn metadata(out: &mut String, config: Option<&serde_json::Value>) {
    if let Some(c) = config {
        writeln!(out, "<metadata>{}</metadata>", escape(&c.to_string())).unwrap();
    }
}

/// Vertical position of a percentage on the layer-curve chart.
pub fn curve_y(percent: f64) -> f64 {
    TOP + (1.0 - percent / 100.0) * PLOT_H
}

fn curve_x(i: usize, n: usize) -> f64 {
    if n <= 1 {
        LEFT + PLOT_W / 2.0
    } else {
        LEFT + i as f64 * PLOT_W / (n - 1) as f64
    }
}

pub(super) fn layer_curves(run: &AnalysisRun, table: &str) -> String {
    let mut out = String::new();
    open(&mut out, CHART_WIDTH, CHART_HEIGHT, &format!("Layer-wise static and dynamic units: {}", run.model_id));
    data_comment(&mut out, table);
    metadata(&mut out, run.config.as_ref());

    // Axes and gridlines.
    writeln!(
        out,
        r##"<g stroke="#000"><line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.2}"/><line x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/></g>"##,
        TOP + PLOT_H,
        TOP + PLOT_H,
        LEFT + PLOT_W,
        TOP + PLOT_H
    )
    .unwrap();
    for tick in (0..=100).step_by(20) {
        let y = curve_y(tick as f64);
        writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{tick}</text>"##,
            LEFT + PLOT_W,
            LEFT - 6.0,
            y + 4.0
        )
        .unwrap();
    }
    let n = run.layers.len();
    for (i, l) in run.layers.iter().enumerate() {
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            curve_x(i, n),
            TOP + PLOT_H + 18.0,
            escape(&l.layer_id)
        )
        .unwrap();
    }
    writeln!(
        out,
        r#"<text x="16" y="{:.2}" transform="rotate(-90 16 {:.2})" text-anchor="middle">units (%)</text>"#,
        TOP + PLOT_H / 2.0,
        TOP + PLOT_H / 2.0
    )
    .unwrap();

    for (name, color, get) in [
        ("static", STATIC_COLOR, (|l: &crate::metrics::LayerBias| l.percent.static_) as fn(&_) -> f64),
        ("dynamic", DYNAMIC_COLOR, |l: &crate::metrics::LayerBias| l.percent.dynamic),
    ] {
        let points: Vec<String> = run
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| format!("{:.2},{:.2}", curve_x(i, n), curve_y(get(l))))
            .collect();
        writeln!(
            out,
            r#"<polyline data-factor="{name}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        )
        .unwrap();
        for (i, l) in run.layers.iter().enumerate() {
            writeln!(
                out,
                r#"<circle data-layer="{}" data-factor="{name}" data-value="{}" cy="{:.2}" cx="{:.2}" r="3" fill="{color}"/>"#,
                escape(&l.layer_id),
                pct(get(l)),
                curve_y(get(l)),
                curve_x(i, n)
            )
            .unwrap();
        }
    }
    let legend_y = CHART_HEIGHT - 12.0;
    writeln!(
        out,
        r#"<g><rect x="{LEFT}" y="{:.2}" width="10" height="10" fill="{STATIC_COLOR}"/><text x="{:.2}" y="{legend_y:.2}">static</text><rect x="{:.2}" y="{:.2}" width="10" height="10" fill="{DYNAMIC_COLOR}"/><text x="{:.2}" y="{legend_y:.2}">dynamic</text></g>"#,
        legend_y - 9.0,
        LEFT + 14.0,
        LEFT + 80.0,
        legend_y - 9.0,
        LEFT + 94.0
    )
    .unwrap();
    out.push_str("</svg>\n");
    out
}

/// One coloured piece of a stacked bar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarSegment {
    pub category: UnitCategory,
    pub value: f64,
    pub x: f64,
    pub width: f64,
}

const BAR_ORDER: [(UnitCategory, &str, &str); 4] = [
    (UnitCategory::Dynamic, "dynamic", DYNAMIC_COLOR),
    (UnitCategory::Static, "static", STATIC_COLOR),
    (UnitCategory::Joint, "joint", "#9467bd"),
    (UnitCategory::Residual, "residual", "#7f7f7f"),
];

/// Nonzero segments of a bar, left to right: dynamic, static, joint, residual.
pub fn bar_segments(bar: &UnitBar) -> Vec<BarSegment> {
    let mut x = BAR_LEFT;
    let mut segs = Vec::new();
    for (i, (category, _, _)) in BAR_ORDER.iter().enumerate() {
        let value = bar.percent[i];
        if value <= 0.0 {
            continue;
        }
        let width = value / 100.0 * BAR_WIDTH;
        segs.push(BarSegment {
            category: *category,
            value,
            x,
            width,
        });
        x += width;
    }
    segs
}

pub(super) fn unit_bars(bars: &[UnitBar], table: &str) -> String {
    let height = TOP + bars.len() as f64 * BAR_ROW + BOTTOM;
    let width = BAR_LEFT + BAR_WIDTH + RIGHT;
    let mut out = String::new();
    open(&mut out, width, height, "Unit categories per layer");
    data_comment(&mut out, table);

    for (row, bar) in bars.iter().enumerate() {
        let y = TOP + row as f64 * BAR_ROW;
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{} {} λ={}</text>"#,
            BAR_LEFT - 6.0,
            y + BAR_HEIGHT - 5.0,
            escape(&bar.model),
            escape(&bar.layer),
            pct(bar.lambda)
        )
        .unwrap();
        for seg in bar_segments(bar) {
            let (_, name, color) = BAR_ORDER.iter().find(|(c, _, _)| *c == seg.category).unwrap();
            writeln!(
                out,
                r#"<rect data-model="{}" data-layer="{}" data-lambda="{}" data-category="{name}" data-value="{}" x="{:.2}" y="{y:.2}" width="{:.2}" height="{BAR_HEIGHT}" fill="{color}"/>"#,
                escape(&bar.model),
                escape(&bar.layer),
                pct(bar.lambda),
                pct(seg.value),
                seg.x,
                seg.width
            )
            .unwrap();
        }
    }
    let legend_y = height - 16.0;
    for (i, (_, name, color)) in BAR_ORDER.iter().enumerate() {
        let x = BAR_LEFT + i as f64 * 90.0;
        writeln!(
            out,
            r#"<rect x="{x:.2}" y="{:.2}" width="10" height="10" fill="{color}"/><text x="{:.2}" y="{legend_y:.2}">{name}</text>"#,
            legend_y - 9.0,
            x + 14.0
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

pub(super) fn center_bias(map: &CenterBiasMap, config: Option<&serde_json::Value>) -> String {
    let cell = (512.0 / map.width.max(map.height) as f64).max(1.0);
    let (w, h) = (map.width as f64 * cell, map.height as f64 * cell);
    let mut out = String::new();
    open(&mut out, w, h, &format!("Center bias over {} masks", map.n_masks));
    let mut table = String::new();
    for row in &map.values {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
        table.push_str(&cells.join(","));
        table.push('\n');
    }
    data_comment(&mut out, &table);
    metadata(&mut out, config);
    out.push_str("<g shape-rendering=\"crispEdges\">\n");
    for (y, row) in map.values.iter().enumerate() {
        for (x, &v) in row.iter().enumerate() {
            let g = (v * 255.0).round() as u8;
            writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="rgb({g},{g},{g})"/>"#,
                x as f64 * cell,
                y as f64 * cell
            )
            .unwrap();
        }
    }
    out.push_str("</g>\n</svg>\n");
    out
}
