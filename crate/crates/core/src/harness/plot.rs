//! Standalone SVG plots of `grad_norm_sq` against `t` on a log y-axis.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::EnsembleSummary;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone)]
pub struct PlotStyle {
    pub title: String,
    pub width: f64,
    pub height: f64,
}

impl PlotStyle {
    pub fn titled(title: &str) -> Self {
        Self { title: title.to_string(), width: 720.0, height: 480.0 }
    }
}

struct Frame {
    left: f64,
    right: f64,
    top: f64,
    bottom: f64,
    t_max: f64,
    log_lo: f64,
    log_hi: f64,
}

impl Frame {
    fn x(&self, t: f64) -> f64 {
        self.left + (self.right - self.left) * t / self.t_max
    }

    fn y(&self, v: f64) -> f64 {
        let f = (v.log10() - self.log_lo) / (self.log_hi - self.log_lo);
        self.bottom - (self.bottom - self.top) * f
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders mean lines with shaded 95% bands, one per summary.
pub fn render_svg(summaries: &[(String, EnsembleSummary)], style: &PlotStyle) -> Result<String> {
    if summaries.is_empty() || summaries.iter().all(|(_, s)| s.is_empty()) {
        return Err(Error::NothingToPlot);
    }
    let mut dropped = 0usize;
    // (t, mean, lo, hi) for plottable points only
    let mut curves: Vec<Vec<(f64, f64, f64, f64)>> = Vec::new();
    for (_, s) in summaries {
        let mut pts = Vec::new();
        for k in 0..s.len() {
            let (m, c) = (s.grad_norm_sq.mean[k], s.grad_norm_sq.ci[k]);
            if !(m.is_finite() && c.is_finite() && m > 0.0) {
                dropped += 1;
                continue;
            }
            let lo = if m - c > 0.0 { m - c } else { m * 1e-3 };
            pts.push((s.t[k] as f64, m, lo, m + c));
        }
        curves.push(pts);
    }
    let all = curves.iter().flatten();
    let t_max = all.clone().map(|p| p.0).fold(1.0, f64::max);
    let lo = all.clone().map(|p| p.2).fold(f64::INFINITY, f64::min);
    let hi = all.map(|p| p.3).fold(f64::NEG_INFINITY, f64::max);
    let (mut log_lo, mut log_hi) = if lo.is_finite() { (lo.log10().floor(), hi.log10().ceil()) } else { (0.0, 1.0) };
    if log_hi <= log_lo {
        log_lo -= 1.0;
        log_hi += 1.0;
    }
    let f = Frame {
        left: 80.0,
        right: style.width - 170.0,
        top: 40.0,
        bottom: style.height - 50.0,
        t_max,
        log_lo,
        log_hi,
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
        w = style.width,
        h = style.height
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" font-size="15">{}</text>"#, f.left, escape(&style.title));
    let _ = writeln!(
        svg,
        r#"<g class="axes" stroke="black" fill="none"><line x1="{l}" y1="{b}" x2="{r}" y2="{b}"/><line x1="{l}" y1="{t}" x2="{l}" y2="{b}"/></g>"#,
        l = f.left,
        r = f.right,
        t = f.top,
        b = f.bottom
    );
    for e in (log_lo as i64)..=(log_hi as i64) {
        let y = f.y(10f64.powi(e as i32));
        let _ = writeln!(
            svg,
            r##"<line x1="{l}" y1="{y:.2}" x2="{r}" y2="{y:.2}" stroke="#ddd"/><text x="{tx}" y="{ty:.2}" text-anchor="end">1e{e}</text>"##,
            l = f.left,
            r = f.right,
            tx = f.left - 6.0,
            ty = y + 4.0
        );
    }
    for k in 0..=5 {
        let t = t_max * k as f64 / 5.0;
        let x = f.x(t);
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{y}" text-anchor="middle">{t:.0}</text>"#,
            y = f.bottom + 18.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{x:.2}" y="{y}" text-anchor="middle">iteration t</text>"#,
        x = (f.left + f.right) / 2.0,
        y = f.bottom + 38.0
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(18 {y:.2}) rotate(-90)" text-anchor="middle">squared gradient norm at the average iterate</text>"#,
        y = (f.top + f.bottom) / 2.0
    );

    for (idx, ((label, _), pts)) in summaries.iter().zip(&curves).enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let _ = writeln!(svg, r#"<g class="series" data-label="{}">"#, escape(label));
        if !pts.is_empty() {
            let mut band = String::new();
            for p in pts {
                let _ = write!(band, "{:.2},{:.2} ", f.x(p.0), f.y(p.3));
            }
            for p in pts.iter().rev() {
                let _ = write!(band, "{:.2},{:.2} ", f.x(p.0), f.y(p.2));
            }
            let _ = writeln!(svg, r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, band.trim_end());
            let mut line = String::new();
            for p in pts {
                let _ = write!(line, "{:.2},{:.2} ", f.x(p.0), f.y(p.1));
            }
            let _ = writeln!(svg, r#"<polyline class="mean" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, line.trim_end());
        }
        let ly = f.top + 10.0 + 20.0 * idx as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{x1}" y1="{ly}" x2="{x2}" y2="{ly}" stroke="{color}" stroke-width="3"/><text class="legend" x="{tx}" y="{ty}">{}</text>"#,
            escape(label),
            x1 = f.right + 15.0,
            x2 = f.right + 40.0,
            tx = f.right + 46.0,
            ty = ly + 4.0
        );
        let _ = writeln!(svg, "</g>");
    }
    if dropped > 0 {
        let _ = writeln!(
            svg,
            r##"<text class="warning" x="{x}" y="{y}" fill="#b00">warning: {dropped} non-finite or non-positive points omitted</text>"##,
            x = f.left + 10.0,
            y = f.top + 14.0
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_plot(summaries: &[(String, EnsembleSummary)], style: &PlotStyle, path: &Path) -> Result<()> {
    std::fs::write(path, render_svg(summaries, style)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricSeries;

    fn summary(values: Vec<f64>, ci: f64) -> EnsembleSummary {
        let len = values.len();
        let s = |v: Vec<f64>| MetricSeries { ci: vec![ci; v.len()], mean: v };
        EnsembleSummary {
            runs: 2,
            t: (0..len).collect(),
            step_size: vec![0.1; len],
            f_avg: s(vec![1.0; len]),
            grad_norm_sq: s(values),
            consensus_sq: s(vec![0.0; len]),
            consensus_quart: s(vec![0.0; len]),
        }
    }

    #[test]
    fn three_series() {
        let input: Vec<(String, EnsembleSummary)> = ["homo-dsgd", "hete-dsgd", "csgd"]
            .iter()
            .enumerate()
            .map(|(k, l)| (l.to_string(), summary((1..50).map(|t| (k + 1) as f64 / t as f64).collect(), 0.01)))
            .collect();
        let svg = render_svg(&input, &PlotStyle::titled("demo")).unwrap();
        assert_eq!(svg.matches(r#"class="mean""#).count(), 3);
        assert_eq!(svg.matches(r#"class="band""#).count(), 3);
        for l in ["homo-dsgd", "hete-dsgd", "csgd"] {
            assert!(svg.contains(&format!(">{l}</text>")));
        }
        assert!(!svg.contains("warning"));
    }

    #[test]
    fn constant_series_is_flat() {
        let svg = render_svg(&[("flat".into(), summary(vec![0.5; 10], 0.0))], &PlotStyle::titled("c")).unwrap();
        let line = svg.lines().find(|l| l.contains(r#"class="mean""#)).unwrap();
        let pts = line.split('"').nth(3).unwrap();
        let ys: Vec<&str> = pts.split(' ').map(|p| p.split(',').nth(1).unwrap()).collect();
        assert!(ys.iter().all(|y| *y == ys[0]));
    }

    #[test]
    fn non_finite_tail_is_dropped_with_warning() {
        let mut v: Vec<f64> = (1..20).map(|t| 1.0 / t as f64).collect();
        v.extend([f64::NAN, f64::INFINITY]);
        let svg = render_svg(&[("x".into(), summary(v, 0.0))], &PlotStyle::titled("w")).unwrap();
        assert!(svg.contains(r#"class="warning""#));
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }

    #[test]
    fn empty_input() {
        assert!(matches!(render_svg(&[], &PlotStyle::titled("e")), Err(Error::NothingToPlot)));
    }
}
