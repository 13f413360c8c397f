//! Minimal deterministic SVG charts: a training-loss curve and per-model box
//! plots of scores across seeds. Output depends only on the input values.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metrics::five_number;
use crate::train::{Anomaly, LossTrace};

const W: f64 = 640.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Linear map from `[lo, hi]` onto `[a, b]`; a degenerate range maps to the midpoint.
fn scale(v: f64, lo: f64, hi: f64, a: f64, b: f64) -> f64 {
    if hi > lo {
        a + (v - lo) / (hi - lo) * (b - a)
    } else {
        (a + b) / 2.0
    }
}

fn axes(s: &mut String, x_label: &str, y_label: &str, y_lo: f64, y_hi: f64) {
    let (x0, y0, x1, y1) = (MARGIN, H - MARGIN, W - MARGIN / 2.0, MARGIN);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    for (v, y) in [(y_lo, y0), (y_hi, y1)] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            x0 - 4.0,
            y + 4.0
        );
    }
}

/// Loss against step as a single polyline. Anomalies are marked with red ticks.
pub fn loss_curve_svg(trace: &LossTrace, anomalies: &[Anomaly], title: &str) -> Result<String> {
    if trace.rows.is_empty() {
        return Err(Error::InvalidInput("cannot plot an empty loss trace".into()));
    }
    if let Some(r) = trace.rows.iter().find(|r| !r.loss.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite loss at step {}", r.step)));
    }
    let s_lo = trace.rows[0].step as f64;
    let s_hi = trace.rows[trace.rows.len() - 1].step as f64;
    let l_lo = trace.rows.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min).min(0.0);
    let l_hi = trace.rows.iter().map(|r| r.loss).fold(f64::NEG_INFINITY, f64::max);
    let px = |step: f64| scale(step, s_lo, s_hi, MARGIN, W - MARGIN / 2.0);
    let py = |loss: f64| scale(loss, l_lo, l_hi, H - MARGIN, MARGIN);

    let mut s = header(title);
    axes(&mut s, "step", "loss", l_lo, l_hi);
    let points: Vec<String> = trace
        .rows
        .iter()
        .map(|r| format!("{:.2},{:.2}", px(r.step as f64), py(r.loss)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#,
        points.join(" ")
    );
    for a in anomalies {
        if let Some(r) = trace.rows.get(a.index) {
            let x = px(r.step as f64);
            let _ = writeln!(
                s,
                r#"<line class="anomaly" x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="red"><title>{} at step {}</title></line>"#,
                MARGIN,
                H - MARGIN,
                a.kind,
                r.step
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// One box per group (e.g. per model), from the five-number summary of its scores.
pub fn box_plot_svg(groups: &[(String, Vec<f64>)], y_label: &str, title: &str) -> Result<String> {
    if groups.is_empty() {
        return Err(Error::InvalidInput("no score groups to plot".into()));
    }
    let summaries = groups
        .iter()
        .map(|(name, xs)| five_number(xs).map_err(|_| Error::InvalidInput(format!("group {name:?} has no scores"))))
        .collect::<Result<Vec<_>>>()?;
    let lo = summaries.iter().map(|f| f[0]).fold(f64::INFINITY, f64::min);
    let hi = summaries.iter().map(|f| f[4]).fold(f64::NEG_INFINITY, f64::max);
    let py = |v: f64| scale(v, lo, hi, H - MARGIN, MARGIN);
    let slot = (W - 1.5 * MARGIN) / groups.len() as f64;
    let half = (slot * 0.25).min(30.0);

    let mut s = header(title);
    axes(&mut s, "", y_label, lo, hi);
    for (i, ((name, _), f)) in groups.iter().zip(&summaries).enumerate() {
        let cx = MARGIN + slot * (i as f64 + 0.5);
        let [mn, q1, med, q3, mx] = f.map(py);
        let _ = writeln!(
            s,
            r#"<g class="box" data-min="{}" data-q1="{}" data-median="{}" data-q3="{}" data-max="{}">"#,
            f[0], f[1], f[2], f[3], f[4]
        );
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.2}" y1="{mn:.2}" x2="{cx:.2}" y2="{q1:.2}" stroke="black"/>"#
        );
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.2}" y1="{q3:.2}" x2="{cx:.2}" y2="{mx:.2}" stroke="black"/>"#
        );
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{q3:.2}" width="{:.2}" height="{:.2}" fill="lightsteelblue" stroke="black"/>"#,
            cx - half,
            2.0 * half,
            (q1 - q3).max(0.0)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{med:.2}" x2="{:.2}" y2="{med:.2}" stroke="black" stroke-width="2"/>"#,
            cx - half,
            cx + half
        );
        for y in [mn, mx] {
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black"/>"#,
                cx - half / 2.0,
                cx + half / 2.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{}" text-anchor="middle">{}</text>"#,
            H - MARGIN + 14.0,
            escape(name)
        );
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    Ok(s)
}
