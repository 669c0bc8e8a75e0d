//! Radar payloads, SVG rendering and multi-token comparison tables.
//!
//! Radar axes always run in [`Indicator::AXES`] order: top10_pos, hhi_pos,
//! vmtv_pos, volatility_pos, liquidity_pos, holders_pos. The first axis
//! points up and the rest follow clockwise.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{write_json, IngestError};
use crate::metrics::apply_caps;
use crate::model::{Indicator, IndicatorReport, PositiveIndicators, TransformCaps};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("incomplete report: {0}")]
    IncompleteReport(String),
    #[error("mismatched axes: {0}")]
    MismatchedAxes(String),
    #[error("comparison needs at least 2 reports, got {0}")]
    TooFewReports(usize),
    #[error(transparent)]
    Io(#[from] IngestError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarPayload {
    pub axes: Vec<String>,
    pub raw: Vec<f64>,
    pub adjusted: Vec<f64>,
}

pub fn axis_names() -> Vec<String> {
    Indicator::AXES.iter().map(|a| a.positive_name().to_string()).collect()
}

fn check_values(label: &str, p: &PositiveIndicators) -> Result<(), ReportError> {
    for (axis, v) in Indicator::AXES.iter().zip(p.to_array()) {
        if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
            return Err(ReportError::IncompleteReport(format!(
                "{label}.{} = {v}",
                axis.positive_name()
            )));
        }
    }
    Ok(())
}

pub fn radar_payload(report: &IndicatorReport) -> Result<RadarPayload, ReportError> {
    check_values("raw", &report.positive_raw)?;
    check_values("adjusted", &report.positive_adjusted)?;
    Ok(RadarPayload {
        axes: axis_names(),
        raw: report.positive_raw.to_array().to_vec(),
        adjusted: report.positive_adjusted.to_array().to_vec(),
    })
}

impl RadarPayload {
    pub fn check_axes(&self) -> Result<(), ReportError> {
        if self.axes != axis_names() {
            return Err(ReportError::MismatchedAxes(format!(
                "expected {:?}, got {:?}",
                axis_names(),
                self.axes
            )));
        }
        if self.raw.len() != 6 || self.adjusted.len() != 6 {
            return Err(ReportError::MismatchedAxes(
                "radar payload needs 6 values per column".into(),
            ));
        }
        Ok(())
    }
}

/// Polygon vertices for values on a unit-radius radar.
pub fn radar_polygon(values: &[f64]) -> Vec<(f64, f64)> {
    let n = values.len() as f64;
    values
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let theta = std::f64::consts::FRAC_PI_2 - std::f64::consts::TAU * k as f64 / n;
            (v * theta.cos(), v * theta.sin())
        })
        .collect()
}

/// Absolute polygon area by the shoelace formula.
pub fn shoelace_area(points: &[(f64, f64)]) -> f64 {
    let n = points.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (x0, y0) = points[i];
            let (x1, y1) = points[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum();
    twice.abs() / 2.0
}

pub fn radar_area(values: &[f64]) -> f64 {
    shoelace_area(&radar_polygon(values))
}

const SVG_SIZE: f64 = 480.0;
const SVG_RADIUS: f64 = 180.0;

fn svg_point((x, y): (f64, f64)) -> String {
    let c = SVG_SIZE / 2.0;
    format!("{:.3},{:.3}", c + x * SVG_RADIUS, c - y * SVG_RADIUS)
}

fn svg_polygon(points: &[(f64, f64)]) -> String {
    points.iter().map(|&p| svg_point(p)).collect::<Vec<_>>().join(" ")
}

/// Static SVG 1.1 drawing with the raw polygon, the adjusted polygon and the
/// unit hexagon.
pub fn render_svg(payload: &RadarPayload, title: &str) -> String {
    let mut s = String::new();
    let c = SVG_SIZE / 2.0;
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SVG_SIZE}" height="{SVG_SIZE}" viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(title));
    for level in [0.25, 0.5, 0.75, 1.0] {
        let ring = radar_polygon(&[level; 6]);
        let _ = writeln!(
            s,
            r##"<polygon points="{}" fill="none" stroke="#cccccc" stroke-width="1"/>"##,
            svg_polygon(&ring)
        );
    }
    for (k, (x, y)) in radar_polygon(&[1.0; 6]).into_iter().enumerate() {
        let _ = writeln!(
            s,
            r##"<line x1="{c:.3}" y1="{c:.3}" x2="{:.3}" y2="{:.3}" stroke="#cccccc" stroke-width="1"/>"##,
            c + x * SVG_RADIUS,
            c - y * SVG_RADIUS
        );
        let (lx, ly) = (c + x * (SVG_RADIUS + 24.0), c - y * (SVG_RADIUS + 24.0));
        let _ = writeln!(
            s,
            r#"<text x="{lx:.3}" y="{ly:.3}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
            escape(&payload.axes[k])
        );
    }
    let _ = writeln!(
        s,
        r##"<polygon id="raw" points="{}" fill="#1f77b4" fill-opacity="0.25" stroke="#1f77b4" stroke-width="2"/>"##,
        svg_polygon(&radar_polygon(&payload.raw))
    );
    let _ = writeln!(
        s,
        r##"<polygon id="adjusted" points="{}" fill="#d62728" fill-opacity="0.25" stroke="#d62728" stroke-width="2"/>"##,
        svg_polygon(&radar_polygon(&payload.adjusted))
    );
    let _ = writeln!(s, "</svg>");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes the radar payload to `out_path` and, when `svg` is set, the
/// drawing next to it with an `.svg` extension.
pub fn emit_radar(report: &IndicatorReport, out_path: &Path, svg: bool) -> Result<RadarPayload, ReportError> {
    let payload = radar_payload(report)?;
    write_json(out_path, &payload)?;
    if svg {
        let svg_path = out_path.with_extension("svg");
        std::fs::write(&svg_path, render_svg(&payload, &report.metadata.token))
            .map_err(|source| IngestError::Io { path: svg_path, source })?;
    }
    Ok(payload)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenComparison {
    pub token: String,
    pub report: IndicatorReport,
    pub raw_area: f64,
    pub adjusted_area: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub caps: TransformCaps,
    pub tokens: Vec<TokenComparison>,
}

/// Puts several token reports on shared caps and measures each token's
/// radar area.
///
/// The volume caps must agree across reports. Liquidity and holder caps
/// become the largest cap among the reports, which with default caps is the
/// largest raw value among the tokens.
pub fn compare_tokens(reports: &[IndicatorReport]) -> Result<Comparison, ReportError> {
    if reports.len() < 2 {
        return Err(ReportError::TooFewReports(reports.len()));
    }
    let first = reports[0].caps;
    for r in &reports[1..] {
        if r.caps.vmtv_cap != first.vmtv_cap || r.caps.volatility_cap != first.volatility_cap {
            return Err(ReportError::MismatchedAxes(format!(
                "token {} uses caps vmtv {} volatility {}, token {} uses vmtv {} volatility {}",
                reports[0].metadata.token,
                first.vmtv_cap,
                first.volatility_cap,
                r.metadata.token,
                r.caps.vmtv_cap,
                r.caps.volatility_cap
            )));
        }
    }
    let caps = TransformCaps {
        vmtv_cap: first.vmtv_cap,
        volatility_cap: first.volatility_cap,
        liquidity_cap: reports.iter().map(|r| r.caps.liquidity_cap).fold(0.0, f64::max),
        holders_cap: reports.iter().map(|r| r.caps.holders_cap).fold(0.0, f64::max),
    };
    let tokens = crate::par::map_slice(reports, |r| {
        let mut report = r.clone();
        apply_caps(&mut report, caps);
        check_values("raw", &report.positive_raw)?;
        check_values("adjusted", &report.positive_adjusted)?;
        Ok(TokenComparison {
            token: report.metadata.token.clone(),
            raw_area: radar_area(&report.positive_raw.to_array()),
            adjusted_area: radar_area(&report.positive_adjusted.to_array()),
            report,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, ReportError>>()?;
    Ok(Comparison { caps, tokens })
}

impl Comparison {
    /// Token with the smallest adjusted radar area.
    pub fn weakest(&self) -> Option<&TokenComparison> {
        self.tokens.iter().min_by(|a, b| {
            a.adjusted_area
                .total_cmp(&b.adjusted_area)
                .then_with(|| a.token.cmp(&b.token))
        })
    }

    fn rows(&self) -> Vec<[String; 6]> {
        let mut rows = Vec::new();
        for t in &self.tokens {
            let (pr, pa) = (t.report.positive_raw.to_array(), t.report.positive_adjusted.to_array());
            for (k, axis) in Indicator::AXES.iter().enumerate() {
                rows.push([
                    t.token.clone(),
                    axis.name().to_string(),
                    t.report.raw.get(*axis).to_string(),
                    t.report.adjusted.get(*axis).to_string(),
                    pr[k].to_string(),
                    pa[k].to_string(),
                ]);
            }
            rows.push([
                t.token.clone(),
                "radar_area".to_string(),
                String::new(),
                String::new(),
                t.raw_area.to_string(),
                t.adjusted_area.to_string(),
            ]);
        }
        rows
    }

    const HEADER: [&'static str; 6] = [
        "token",
        "indicator",
        "raw",
        "adjusted",
        "positive_raw",
        "positive_adjusted",
    ];

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::HEADER).expect("in-memory write");
        for row in self.rows() {
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
    }

    /// Space-aligned table with the same content as the CSV.
    pub fn to_text(&self) -> String {
        let rows = self.rows();
        let mut widths: Vec<usize> = Self::HEADER.iter().map(|h| h.len()).collect();
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let line = |cells: Vec<&str>| -> String {
            let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            padded.join("  ").trim_end().to_string()
        };
        let mut out = line(Self::HEADER.to_vec());
        out.push('\n');
        for row in &rows {
            out.push_str(&line(row.iter().map(String::as_str).collect()));
            out.push('\n');
        }
        out
    }

    /// Radar payload per token, in comparison order.
    pub fn payloads(&self) -> Vec<(String, RadarPayload)> {
        self.tokens
            .iter()
            .map(|t| {
                (
                    t.token.clone(),
                    RadarPayload {
                        axes: axis_names(),
                        raw: t.report.positive_raw.to_array().to_vec(),
                        adjusted: t.report.positive_adjusted.to_array().to_vec(),
                    },
                )
            })
            .collect()
    }
}
