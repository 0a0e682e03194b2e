//! Deterministic output writers: JSON documents, CSV tables with an embedded
//! config-hash comment line, and self-contained SVG log-log charts.

use crate::error::{Error, Result};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;

/// Artifact version stamped into every output.
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidInput(format!("serialization failed: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// CSV with a leading `# config_hash=…` comment line, then an RFC-4180
/// header record and rows.
pub fn write_csv(
    path: &Path,
    config_hash: &str,
    header: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "# config_hash={config_hash},artifact_version={ARTIFACT_VERSION}");
    let _ = writeln!(out, "{}", header.join(","));
    for row in rows {
        let _ = writeln!(out, "{}", row.join(","));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.12e}")
    }
}

/// Minimal self-contained SVG 1.1 log-log scatter with the fitted power law
/// overlaid. Deterministic output for identical inputs.
pub struct LogLogChart<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub points: &'a [(f64, f64)],
    pub slope: f64,
    pub config_hash: &'a str,
}

pub fn svg_loglog(chart: &LogLogChart<'_>) -> Result<String> {
    let pts: Vec<(f64, f64)> = chart
        .points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|&(x, y)| (x.log10(), y.log10()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InvalidInput("chart needs >= 2 positive points".into()));
    }
    let (mut x_min, mut x_max, mut y_min, mut y_max) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    let pad_x = ((x_max - x_min) * 0.08).max(0.05);
    let pad_y = ((y_max - y_min) * 0.12).max(0.05);
    x_min -= pad_x;
    x_max += pad_x;
    y_min -= pad_y;
    y_max += pad_y;

    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const ML: f64 = 70.0;
    const MR: f64 = 20.0;
    const MT: f64 = 40.0;
    const MB: f64 = 55.0;
    let sx = |x: f64| ML + (x - x_min) / (x_max - x_min) * (W - ML - MR);
    let sy = |y: f64| H - MB - (y - y_min) / (y_max - y_min) * (H - MT - MB);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, "<!-- config_hash={} artifact_version={} -->", chart.config_hash, ARTIFACT_VERSION);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" font-family="monospace" font-size="15" text-anchor="middle">{}</text>"#,
        W / 2.0,
        chart.title
    );
    // frame
    let _ = writeln!(
        s,
        r#"<rect x="{ML:.1}" y="{MT:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        W - ML - MR,
        H - MT - MB
    );
    // decade ticks
    for d in (x_min.floor() as i64)..=(x_max.ceil() as i64) {
        let x = d as f64;
        if x < x_min || x > x_max {
            continue;
        }
        let px = sx(x);
        let _ = writeln!(
            s,
            r#"<line x1="{px:.1}" y1="{:.1}" x2="{px:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="3,4"/>"#,
            MT,
            H - MB
        );
        let _ = writeln!(
            s,
            r#"<text x="{px:.1}" y="{:.1}" font-family="monospace" font-size="12" text-anchor="middle">1e{d}</text>"#,
            H - MB + 18.0
        );
    }
    for d in (y_min.floor() as i64)..=(y_max.ceil() as i64) {
        let y = d as f64;
        if y < y_min || y > y_max {
            continue;
        }
        let py = sy(y);
        let _ = writeln!(
            s,
            r#"<line x1="{ML:.1}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="gray" stroke-dasharray="3,4"/>"#,
            W - MR
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{py:.1}" font-family="monospace" font-size="12" text-anchor="end">1e{d}</text>"#,
            ML - 6.0
        );
    }
    // fitted line through the centroid with the given slope
    let cx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let cy = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let line_y = |x: f64| cy + chart.slope * (x - cx);
    let _ = writeln!(
        s,
        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="steelblue" stroke-width="1.5"/>"#,
        sx(x_min + pad_x * 0.5),
        sy(line_y(x_min + pad_x * 0.5)),
        sx(x_max - pad_x * 0.5),
        sy(line_y(x_max - pad_x * 0.5))
    );
    for &(x, y) in &pts {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="crimson"/>"#,
            sx(x),
            sy(y)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-family="monospace" font-size="13" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 12.0,
        chart.x_label
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" font-family="monospace" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        chart.y_label
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-family="monospace" font-size="13" fill="steelblue">slope = {:.4}</text>"#,
        ML + 10.0,
        MT + 18.0,
        chart.slope
    );
    let _ = writeln!(s, "</svg>");
    Ok(s)
}

pub fn write_svg(path: &Path, chart: &LogLogChart<'_>) -> Result<()> {
    std::fs::write(path, svg_loglog(chart)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_is_deterministic_and_self_contained() {
        let pts = vec![(0.5, 0.3), (0.25, 0.21), (0.125, 0.15), (0.0625, 0.105)];
        let chart = LogLogChart {
            title: "terminal limit",
            x_label: "h",
            y_label: "max error",
            points: &pts,
            slope: 0.5,
            config_hash: "abc123",
        };
        let a = svg_loglog(&chart).unwrap();
        let b = svg_loglog(&chart).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.contains("config_hash=abc123"));
        assert!(!a.contains("http://") || a.contains("xmlns"));
    }
}
