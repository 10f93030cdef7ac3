//! Latency-vs-nodes charts as standalone SVG 1.1.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nicsim_core::analytic::{builtin_params, predict_latency};
use nicsim_core::harness::ResultRow;

use crate::error::CliError;

/// Hardware broadcast barrier latency drawn on Quadrics plots, in µs.
pub const HW_BARRIER_US: f64 = 4.20;

const W: f64 = 800.0;
const H: f64 = 500.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, Default)]
pub struct PlotOptions {
    pub title: Option<String>,
    /// Adds the closed-form model prediction as a dashed series.
    pub model_overlay: bool,
    /// Horizontal hardware-barrier line; `None` means "only on Quadrics".
    pub reference_line: Option<bool>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn nice_ceiling(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let mag = 10f64.powf(x.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0].iter().map(|m| m * mag).find(|&v| v >= x).unwrap_or(10.0 * mag)
}

struct Series {
    label: String,
    points: Vec<(usize, f64)>,
    dashed: bool,
}

pub fn render_svg(rows: &[ResultRow], opts: &PlotOptions) -> Result<String, CliError> {
    let first = rows.first().ok_or_else(|| CliError::config("plot: no rows to draw"))?;
    let platform = first.platform.clone();
    if let Some(other) = rows.iter().find(|r| r.platform != platform) {
        return Err(CliError::config(format!(
            "plot: rows mix platforms `{platform}` and `{}`; filter to one",
            other.platform
        )));
    }

    let mut grouped: BTreeMap<(String, String), BTreeMap<usize, f64>> = BTreeMap::new();
    for r in rows {
        grouped.entry((r.mode.to_string(), r.algorithm.to_string())).or_default().insert(r.n, r.mean_us);
    }
    let mut series: Vec<Series> = grouped
        .into_iter()
        .map(|((mode, alg), pts)| Series { label: format!("{mode} / {alg}"), points: pts.into_iter().collect(), dashed: false })
        .collect();

    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();

    if opts.model_overlay {
        let params = builtin_params(&platform)?;
        let points: Vec<(usize, f64)> =
            ns.iter().filter(|&&n| n >= 2).map(|&n| (n, predict_latency(&params, n).expect("n >= 2"))).collect();
        if points.is_empty() {
            return Err(CliError::config("plot: the model overlay needs n >= 2"));
        }
        series.push(Series { label: "model".to_string(), points, dashed: true });
    }
    let reference = opts.reference_line.unwrap_or(platform == "quadrics-elan3");

    let lx = |n: usize| (n as f64).log2();
    let (mut x0, mut x1) = (lx(ns[0]).floor(), lx(*ns.last().expect("nonempty")).ceil());
    if x1 <= x0 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    let ymax_data = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).fold(0.0, f64::max);
    let ymax = nice_ceiling(1.1 * ymax_data.max(if reference { HW_BARRIER_US } else { 0.0 }));

    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let px = |n: usize| LEFT + (lx(n) - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + ph - y / ymax * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let title = opts.title.clone().unwrap_or_else(|| format!("Barrier latency, {platform}"));
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, LEFT + pw / 2.0, esc(&title));

    // Axes.
    let _ = writeln!(s, r#"<line class="axis" x1="{LEFT}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, TOP + ph, LEFT + pw, TOP + ph);
    let _ = writeln!(s, r#"<line class="axis" x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>"#, TOP + ph);
    for k in x0 as i64..=x1 as i64 {
        let n = 1usize << k;
        let x = px(n);
        let _ = writeln!(
            s,
            r#"<g class="xtick"><line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" text-anchor="middle">{n}</text></g>"#,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 20.0
        );
    }
    for i in 0..=5 {
        let v = ymax * i as f64 / 5.0;
        let y = py(v);
        let _ = writeln!(
            s,
            r##"<g class="ytick"><line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/><line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#dddddd"/><text x="{}" y="{:.2}" text-anchor="end">{}</text></g>"##,
            LEFT - 5.0,
            LEFT + pw,
            LEFT - 8.0,
            y + 4.0,
            trim_float(v)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">Number of nodes</text>"#, LEFT + pw / 2.0, H - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">Latency (µs)</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );

    if reference {
        let y = py(HW_BARRIER_US);
        let _ = writeln!(
            s,
            r##"<line class="reference" x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#555555" stroke-dasharray="2 3"/>"##,
            LEFT + pw
        );
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" font-size="10">hardware barrier {HW_BARRIER_US:.2}µs</text>"#, LEFT + 4.0, y - 4.0);
    }

    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let dash = if ser.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let class = if ser.dashed { "model" } else { "series" };
        if ser.points.len() >= 2 {
            let pts: Vec<String> = ser.points.iter().map(|&(n, y)| format!("{:.2},{:.2}", px(n), py(y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline class="{class}" fill="none" stroke="{color}" stroke-width="2"{dash} points="{}"/>"#,
                pts.join(" ")
            );
        }
        if !ser.dashed {
            for &(n, y) in &ser.points {
                let _ = writeln!(s, r#"<circle class="marker" cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(n), py(y));
            }
        }
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx0 = W - RIGHT + 15.0;
        let _ = writeln!(
            s,
            r#"<g class="legend"><line x1="{lx0}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text></g>"#,
            lx0 + 25.0,
            lx0 + 32.0,
            ly + 4.0,
            esc(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn trim_float(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}
