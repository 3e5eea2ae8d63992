//! Self-contained SVG sweep plots: one polyline per method, x = sweep
//! value, y = trial mean of the chosen metric.

use crate::runner::JsonlRecord;
use anyhow::{bail, Result};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    EpsCate,
    EpsAte,
}

impl MetricKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "eps-cate" | "eps_cate" => Ok(MetricKind::EpsCate),
            "eps-ate" | "eps_ate" => Ok(MetricKind::EpsAte),
            other => bail!("unknown metric `{other}` (expected eps-cate or eps-ate)"),
        }
    }

    fn label(&self) -> &'static str {
        match self {
            MetricKind::EpsCate => "eps_cate",
            MetricKind::EpsAte => "eps_ate",
        }
    }

    fn of(&self, r: &JsonlRecord) -> Option<f64> {
        match self {
            MetricKind::EpsCate => r.eps_cate,
            MetricKind::EpsAte => r.eps_ate,
        }
    }
}

/// Per-method polyline vertices `(sweep value, trial mean)`.
pub fn series(
    records: &[JsonlRecord],
    axis: &str,
    metric: MetricKind,
) -> Result<Vec<(String, Vec<(f64, f64)>)>> {
    let on_axis: Vec<&JsonlRecord> = records.iter().filter(|r| r.sweep_axis == axis).collect();
    if on_axis.is_empty() {
        bail!("no records on sweep axis `{axis}`");
    }
    let mut methods = Vec::new();
    for r in &on_axis {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    let mut values: Vec<f64> = on_axis
        .iter()
        .map(|r| r.sweep_value.to_bits())
        .collect::<BTreeSet<u64>>()
        .into_iter()
        .map(f64::from_bits)
        .collect();
    values.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    for method in methods {
        let mut pts = Vec::new();
        for &v in &values {
            let ys: Vec<f64> = on_axis
                .iter()
                .filter(|r| r.method == method && r.sweep_value == v)
                .filter_map(|r| metric.of(r))
                .collect();
            if !ys.is_empty() {
                pts.push((v, ys.iter().sum::<f64>() / ys.len() as f64));
            }
        }
        if !pts.is_empty() {
            out.push((method, pts));
        }
    }
    Ok(out)
}

/// Renders the sweep plot; deterministic for fixed input.
pub fn emit_plot(
    records: &[JsonlRecord],
    axis: &str,
    metric: MetricKind,
    out: &Path,
) -> Result<()> {
    let lines = series(records, axis, metric)?;
    let xs: Vec<f64> = lines.iter().flat_map(|(_, pts)| pts.iter().map(|p| p.0)).collect();
    let ys: Vec<f64> = lines.iter().flat_map(|(_, pts)| pts.iter().map(|p| p.1)).collect();
    let (x_min, x_max) = bounds(&xs);
    let (y_min, y_max) = bounds(&ys);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = |y: f64| MARGIN_T + (y_max - y) / (y_max - y_min) * plot_h;

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )?;
    writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#)?;
    // Axes.
    writeln!(
        svg,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        MARGIN_L,
        MARGIN_T + plot_h,
        MARGIN_L + plot_w,
        MARGIN_T + plot_h
    )?;
    writeln!(
        svg,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        MARGIN_L,
        MARGIN_T,
        MARGIN_L,
        MARGIN_T + plot_h
    )?;
    for (v, anchor, dy) in [(x_min, "start", 0.0), (x_max, "end", 0.0)] {
        writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="{anchor}">{v}</text>"#,
            sx(v),
            MARGIN_T + plot_h + 18.0 + dy
        )?;
    }
    for v in [y_min, y_max] {
        writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{v:.4}</text>"#,
            MARGIN_L - 6.0,
            sy(v) + 4.0
        )?;
    }
    writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">{axis}</text>"#,
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 12.0
    )?;
    writeln!(
        svg,
        r#"<text x="16" y="{}" font-size="13" transform="rotate(-90 16 {})" text-anchor="middle">{}</text>"#,
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        metric.label()
    )?;
    for (k, (method, pts)) in lines.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.3},{:.3}", sx(x), sy(y)))
            .collect();
        writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.8" points="{}"/>"#,
            coords.join(" ")
        )?;
        let ly = MARGIN_T + 14.0 + 18.0 * k as f64;
        writeln!(
            svg,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="3"/>"#,
            MARGIN_L + plot_w + 10.0,
            ly - 4.0,
            MARGIN_L + plot_w + 30.0,
            ly - 4.0
        )?;
        writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="12">{method}</text>"#,
            MARGIN_L + plot_w + 36.0,
            ly
        )?;
    }
    writeln!(svg, "</svg>")?;
    std::fs::write(out, svg)?;
    Ok(())
}

fn bounds(vals: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in vals {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo == hi {
        // Degenerate span; widen symmetrically so the scale is defined.
        lo -= 0.5;
        hi += 0.5;
    }
    (lo, hi)
}
