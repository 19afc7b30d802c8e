//! Minimal static SVG plots: power curves and confidence-region scans.

use std::fmt::Write;

use crate::inference::RegionScan;
use crate::sim::PowerRow;

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 45.0;
const LEGEND_H: f64 = 18.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x0: f64,
    y0: f64,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let span = if self.xmax > self.xmin { self.xmax - self.xmin } else { 1.0 };
        self.x0 + MARGIN + (x - self.xmin) / span * (PANEL_W - 1.5 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        let span = if self.ymax > self.ymin { self.ymax - self.ymin } else { 1.0 };
        self.y0 + PANEL_H - MARGIN - (y - self.ymin) / span * (PANEL_H - 1.5 * MARGIN)
    }

    fn axes(&self, out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let (l, r) = (self.px(self.xmin), self.px(self.xmax));
        let (b, t) = (self.py(self.ymin), self.py(self.ymax));
        let _ = writeln!(out, r##"<rect x="{l:.2}" y="{t:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##, r - l, b - t);
        for (v, pos) in [(self.xmin, l), (self.xmax, r)] {
            let _ = writeln!(out, r#"<text x="{pos:.2}" y="{:.2}" font-size="10" text-anchor="middle">{v:.3}</text>"#, b + 13.0);
        }
        for (v, pos) in [(self.ymin, b), (self.ymax, t)] {
            let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{v:.2}</text>"#, l - 4.0, pos + 3.0);
        }
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#, (l + r) / 2.0, self.y0 + 16.0, esc(title));
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#, (l + r) / 2.0, b + 28.0, esc(xlabel));
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
            self.x0 + 12.0,
            (b + t) / 2.0,
            self.x0 + 12.0,
            (b + t) / 2.0,
            esc(ylabel)
        );
    }
}

fn header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Power against `θ`, one panel per family (in first-appearance order) and
/// one polyline per `(statistic, s)` series.
pub fn power_curves(rows: &[PowerRow]) -> String {
    curves(rows, "theta", "power", 1.0)
}

/// Empirical level against the dimension, one panel per family. Rows are
/// paired with the dimension of their scenario.
pub fn level_chart(rows: &[(usize, PowerRow)]) -> String {
    let mapped: Vec<PowerRow> = rows
        .iter()
        .map(|(p, r)| PowerRow {
            theta: *p as f64,
            s: 0,
            ..r.clone()
        })
        .collect();
    let top = mapped.iter().map(|r| r.power_estimate).filter(|v| v.is_finite()).fold(0.1, f64::max);
    curves(&mapped, "P", "level", top)
}

fn curves(rows: &[PowerRow], xlabel: &str, ylabel: &str, ymax: f64) -> String {
    let mut families: Vec<String> = Vec::new();
    let mut series: Vec<(String, usize)> = Vec::new();
    for r in rows {
        let f = r.family.to_string();
        if !families.contains(&f) {
            families.push(f);
        }
        if !series.contains(&(r.statistic_id.clone(), r.s)) {
            series.push((r.statistic_id.clone(), r.s));
        }
    }
    let width = PANEL_W * families.len().max(1) as f64;
    let height = PANEL_H + LEGEND_H * series.len() as f64 + 10.0;
    let mut out = header(width, height);
    for (k, fam) in families.iter().enumerate() {
        let fam_rows: Vec<&PowerRow> = rows.iter().filter(|r| &r.family.to_string() == fam).collect();
        let xmin = fam_rows.iter().map(|r| r.theta).fold(f64::INFINITY, f64::min);
        let xmax = fam_rows.iter().map(|r| r.theta).fold(f64::NEG_INFINITY, f64::max);
        let frame = Frame {
            x0: PANEL_W * k as f64,
            y0: 0.0,
            xmin,
            xmax,
            ymin: 0.0,
            ymax,
        };
        frame.axes(&mut out, fam, xlabel, ylabel);
        for (i, (id, s)) in series.iter().enumerate() {
            let pts: Vec<String> = fam_rows
                .iter()
                .filter(|r| &r.statistic_id == id && r.s == *s && r.power_estimate.is_finite())
                .map(|r| format!("{:.2},{:.2}", frame.px(r.theta), frame.py(r.power_estimate)))
                .collect();
            if !pts.is_empty() {
                let _ = writeln!(
                    out,
                    r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                    COLORS[i % COLORS.len()],
                    pts.join(" ")
                );
            }
        }
    }
    for (i, (id, s)) in series.iter().enumerate() {
        let y = PANEL_H + LEGEND_H * i as f64 + 5.0;
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{}" stroke-width="2"/><text x="{:.2}" y="{:.2}" font-size="11">{} (s = {s})</text>"#,
            MARGIN,
            MARGIN + 20.0,
            COLORS[i % COLORS.len()],
            MARGIN + 26.0,
            y + 4.0,
            esc(id)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Membership of a 1-D or 2-D lattice: filled markers for members.
pub fn region_scan(scan: &RegionScan) -> String {
    let dim = scan.points.first().map_or(1, Vec::len);
    let range = |k: usize| {
        let lo = scan.points.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
        let hi = scan.points.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() {
            (lo, hi)
        } else {
            (0.0, 1.0)
        }
    };
    let (xmin, xmax) = range(0);
    let (ymin, ymax) = if dim == 2 { range(1) } else { (0.0, 1.0) };
    let frame = Frame {
        x0: 0.0,
        y0: 0.0,
        xmin,
        xmax,
        ymin,
        ymax,
    };
    let mut out = header(PANEL_W, PANEL_H);
    frame.axes(&mut out, "confidence region", "c[0]", if dim == 2 { "c[1]" } else { "" });
    for (p, &m) in scan.points.iter().zip(&scan.member) {
        let y = if dim == 2 { p[1] } else { 0.5 };
        let fill = if m { "#1f77b4" } else { "none" };
        let _ = writeln!(
            out,
            r##"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{fill}" stroke="#1f77b4" stroke-width="0.5"/>"##,
            frame.px(p[0]),
            frame.py(y)
        );
    }
    out.push_str("</svg>\n");
    out
}
