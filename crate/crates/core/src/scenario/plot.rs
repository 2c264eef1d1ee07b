use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::integrate::SimTrace;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 130.0;
const MARGIN_Y: f64 = 40.0;
const MAX_POINTS: usize = 2000;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn nice_ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let raw = span / count as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let mut ticks = Vec::new();
    let mut t = (lo / step).ceil() * step;
    while t <= hi + 1e-9 * step {
        ticks.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    ticks
}

/// SVG of every position coordinate against time, one curve and legend
/// entry per coordinate.
pub fn render_svg(trace: &SimTrace) -> Result<String> {
    trace.validate()?;
    if trace.is_empty() {
        return Err(Error::InvalidTrace("cannot plot an empty trace".into()));
    }
    let n = trace.layout.agent_dim;
    let curves = trace.layout.stacked();
    let (t0, t1) = (trace.times[0], trace.times[trace.len() - 1]);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for x in &trace.states {
        for v in x.rows(0, curves).iter() {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::NonFinite { what: "trace positions".into() });
    }
    if hi - lo < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    } else {
        let pad = 0.05 * (hi - lo);
        lo -= pad;
        hi += pad;
    }
    let tspan = if t1 > t0 { t1 - t0 } else { 1.0 };
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - 2.0 * MARGIN_Y;
    let px = |t: f64| MARGIN_LEFT + (t - t0) / tspan * plot_w;
    let py = |y: f64| MARGIN_Y + (hi - y) / (hi - lo) * plot_h;

    let mut svg = String::new();
    let w = &mut svg;
    writeln!(w, r#"<?xml version="1.0" encoding="UTF-8"?>"#).unwrap();
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        w,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_Y}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    for t in nice_ticks(t0, t0 + tspan, 8) {
        let x = px(t);
        writeln!(
            w,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{MARGIN_Y}" stroke="#dddddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{t}</text>"##,
            MARGIN_Y + plot_h,
            MARGIN_Y + plot_h + 16.0
        )
        .unwrap();
    }
    for y in nice_ticks(lo, hi, 6) {
        let yy = py(y);
        writeln!(
            w,
            r##"<line x1="{MARGIN_LEFT}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{y}</text>"##,
            MARGIN_LEFT + plot_w,
            MARGIN_LEFT - 6.0,
            yy + 4.0
        )
        .unwrap();
    }
    writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">time [s]</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 6.0
    )
    .unwrap();
    writeln!(
        w,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">position q</text>"#,
        MARGIN_Y + plot_h / 2.0,
        MARGIN_Y + plot_h / 2.0
    )
    .unwrap();

    let stride = trace.len().div_ceil(MAX_POINTS).max(1);
    for c in 0..curves {
        let color = PALETTE[c % PALETTE.len()];
        let mut points = String::new();
        for k in (0..trace.len()).step_by(stride).chain(std::iter::once(trace.len() - 1)) {
            write!(points, "{:.2},{:.2} ", px(trace.times[k]), py(trace.states[k][c])).unwrap();
        }
        writeln!(
            w,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.trim_end()
        )
        .unwrap();
        let label = if n == 1 {
            format!("agent {}", c + 1)
        } else {
            format!("agent {} q{}", c / n + 1, c % n + 1)
        };
        let ly = MARGIN_Y + 10.0 + 18.0 * c as f64;
        let lx = MARGIN_LEFT + plot_w + 12.0;
        writeln!(
            w,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{label}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0
        )
        .unwrap();
    }
    writeln!(w, "</svg>").unwrap();
    Ok(svg)
}

pub fn emit_plot(trace: &SimTrace, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_svg(trace)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::{TraceLayout, TraceMeta};
    use nalgebra::{dvector, DVector};

    fn trace(num_agents: usize, len: usize) -> SimTrace {
        SimTrace {
            layout: TraceLayout {
                num_agents,
                agent_dim: 1,
                num_edge_states: 0,
            },
            times: (0..len).map(|k| k as f64 * 0.1).collect(),
            states: (0..len).map(|k| DVector::from_element(2 * num_agents, (-(k as f64)).exp())).collect(),
            tau: (0..len).map(|_| DVector::zeros(num_agents)).collect(),
            storage: vec![0.0; len],
            meta: TraceMeta::default(),
        }
    }

    #[test]
    fn empty_trace_is_an_error() {
        assert!(matches!(render_svg(&trace(2, 0)), Err(Error::InvalidTrace(_))));
    }

    #[test]
    fn one_curve_per_agent() {
        let svg = render_svg(&trace(1, 30)).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("agent 1"));
        let svg = render_svg(&trace(6, 30)).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 6);
        assert!(svg.contains("agent 6"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn flat_trace_renders() {
        let mut t = trace(1, 3);
        t.states = vec![dvector![0.36, 0.0]; 3];
        assert!(render_svg(&t).is_ok());
    }
}
