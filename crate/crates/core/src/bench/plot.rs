//! Dependency-free SVG line charts of mean ± standard error against `n`.

use std::fmt::Write as _;
use std::path::Path;

use super::summary::{read_summary_csv, SummaryRow, METRICS};
use crate::evaluation::Method;
use crate::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 56.0;

fn color(method: Method) -> &'static str {
    match method {
        Method::RewardFiltered => "#1f77b4",
        Method::NaiveThresholded => "#d62728",
    }
}

fn metric_label(metric: &str) -> &'static str {
    match metric {
        "q_mse" => "Q-function MSE (stage 1)",
        "tpr" => "true positive rate",
        "fpr" => "false positive rate",
        "fp_count" => "false positive count",
        _ => "wall time (ms)",
    }
}

#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    fn new(lo: f64, hi: f64, log: bool, px_lo: f64, px_hi: f64) -> Self {
        let (mut lo, mut hi) = if log { (lo.log10(), hi.log10()) } else { (lo, hi) };
        if hi - lo < 1e-12 {
            let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
            lo -= pad;
            hi += pad;
        }
        Axis { lo, hi, log, px_lo, px_hi }
    }

    fn map(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }

    /// Tick values in data units.
    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let (a, b) = (self.lo.floor() as i32, self.hi.ceil() as i32);
            (a..=b)
                .map(|e| 10f64.powi(e))
                .filter(|&v| v.log10() >= self.lo - 1e-9 && v.log10() <= self.hi + 1e-9)
                .collect()
        } else {
            let raw = (self.hi - self.lo) / 5.0;
            let mag = 10f64.powf(raw.log10().floor());
            let step = [1.0, 2.0, 2.5, 5.0, 10.0]
                .iter()
                .map(|m| m * mag)
                .find(|s| *s >= raw)
                .unwrap_or(10.0 * mag);
            let start = (self.lo / step).ceil() as i64;
            let end = (self.hi / step).floor() as i64;
            (start..=end).map(|k| k as f64 * step).collect()
        }
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Renders one metric: log-log axes for `q_mse`, linear axes otherwise.
pub fn render_svg(rows: &[SummaryRow], metric: &str) -> Result<String> {
    if !METRICS.contains(&metric) {
        return Err(Error::UnknownMetric(metric.to_string()));
    }
    let mut series: Vec<(Method, Vec<&SummaryRow>)> = Vec::new();
    for method in Method::ALL {
        let mut pts: Vec<&SummaryRow> = rows
            .iter()
            .filter(|r| r.method == method && r.metric == metric && r.mean.is_finite())
            .collect();
        pts.sort_by_key(|r| r.n);
        if !pts.is_empty() {
            series.push((method, pts));
        }
    }
    if series.is_empty() {
        return Err(Error::UnknownMetric(format!("{metric} (no rows in summary)")));
    }

    let log = metric == "q_mse";
    let all: Vec<&SummaryRow> = series.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let n_lo = all.iter().map(|r| r.n).min().unwrap() as f64;
    let n_hi = all.iter().map(|r| r.n).max().unwrap() as f64;
    // On the log axis a band that reaches zero is clipped to a twentieth of the mean.
    let lower = |r: &SummaryRow| {
        let v = r.mean - r.standard_error;
        if log {
            v.max(r.mean / 20.0)
        } else {
            v
        }
    };
    let upper = |r: &SummaryRow| r.mean + r.standard_error;
    let mut y_lo = all.iter().map(|r| lower(r)).fold(f64::INFINITY, f64::min);
    let y_hi = all.iter().map(|r| upper(r)).fold(f64::NEG_INFINITY, f64::max);
    if log && !(y_lo > 0.0) {
        y_lo = y_hi.max(1e-12) * 1e-3;
    }
    if !log && metric != "wall_time_ms" {
        y_lo = y_lo.min(0.0);
    }
    let x_axis = Axis::new(n_lo.max(if log { 1.0 } else { f64::MIN }), n_hi, log, LEFT, WIDTH - RIGHT);
    let y_axis = Axis::new(y_lo.max(if log { 1e-300 } else { f64::MIN }), y_hi, log, HEIGHT - BOTTOM, TOP);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{} vs sample size</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        metric_label(metric)
    );

    // Axes, ticks and grid.
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
    let _ = writeln!(s, r#"<g stroke="black" stroke-width="1"><line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>"#);
    let mut x_ticks: Vec<f64> = all.iter().map(|r| r.n as f64).collect();
    x_ticks.sort_by(f64::total_cmp);
    x_ticks.dedup();
    for v in x_ticks {
        let px = x_axis.map(v);
        let _ = writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + 5.0,
            y0 + 18.0,
            v
        );
    }
    for v in y_axis.ticks() {
        let py = y_axis.map(v);
        let _ = writeln!(
            s,
            r##"<line x1="{x0}" y1="{py:.2}" x2="{x1}" y2="{py:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            x0 - 6.0,
            py + 4.0,
            fmt_tick(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">sample size n{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 14.0,
        if log { " (log scale)" } else { "" }
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {:.2}) rotate(-90)" text-anchor="middle">{}{}</text>"#,
        (y0 + y1) / 2.0,
        metric_label(metric),
        if log { " (log scale)" } else { "" }
    );

    // Bands, then lines and markers on top.
    for (method, pts) in &series {
        let mut poly = Vec::with_capacity(2 * pts.len());
        poly.extend(pts.iter().map(|r| format!("{:.2},{:.2}", x_axis.map(r.n as f64), y_axis.map(upper(r)))));
        poly.extend(pts.iter().rev().map(|r| format!("{:.2},{:.2}", x_axis.map(r.n as f64), y_axis.map(lower(r)))));
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="{}" fill-opacity="0.2" stroke="none"/>"#,
            poly.join(" "),
            color(*method)
        );
    }
    for (method, pts) in &series {
        let line: Vec<String> = pts
            .iter()
            .map(|r| format!("{:.2},{:.2}", x_axis.map(r.n as f64), y_axis.map(r.mean)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            line.join(" "),
            color(*method)
        );
        for r in pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#,
                x_axis.map(r.n as f64),
                y_axis.map(r.mean),
                color(*method)
            );
        }
    }

    for (k, (method, _)) in series.iter().enumerate() {
        let y = TOP + 10.0 + 20.0 * k as f64;
        let x = WIDTH - RIGHT + 14.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{:.2}" width="18" height="10" fill="{}" fill-opacity="0.35" stroke="{}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            y - 9.0,
            color(*method),
            color(*method),
            x + 24.0,
            y,
            method
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Reads a summary CSV and writes the chart for `metric`.
pub fn plot(summary_csv: &Path, metric: &str, output_svg: &Path) -> Result<()> {
    if !METRICS.contains(&metric) {
        return Err(Error::UnknownMetric(metric.to_string()));
    }
    let rows = read_summary_csv(crate::io::open(summary_csv)?)?;
    let svg = render_svg(&rows, metric)?;
    if let Some(parent) = output_svg.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(output_svg, svg).map_err(|e| Error::io(output_svg, e))
}
