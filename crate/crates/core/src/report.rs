//! Text, JSON and CSV rendering of simulation reports.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::SimReport;

/// Version of the JSON layout.
pub const JSON_SCHEMA: u32 = 1;

/// Metric definitions carried in every report header.
pub const DEFINITIONS: [(&str, &str); 5] = [
    ("fps", "frames / total latency, one frame per simulated input"),
    ("avg_power_w", "total energy / total latency"),
    ("fps_per_watt", "fps / avg_power_w"),
    ("epb", "total energy / bits_processed, in joules per bit"),
    (
        "bits_processed",
        "sum over photonic passes of active lanes x (weight bits + activation bits) + 16 ADC output bits",
    ),
];

pub const CSV_HEADER: &str = "layer,passes,gated,energy_j,latency_s";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Text,
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Self::Text),
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(Error::Config(format!(
                "unknown format `{other}`, expected text, json or csv"
            ))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonReport {
    schema: u32,
    definitions: std::collections::BTreeMap<String, String>,
    report: SimReport,
}

pub fn render(report: &SimReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Text => Ok(render_text(report)),
        ReportFormat::Json => render_json(report),
        ReportFormat::Csv => Ok(render_csv(report)),
    }
}

pub fn render_json(report: &SimReport) -> Result<String> {
    let doc = JsonReport {
        schema: JSON_SCHEMA,
        definitions: DEFINITIONS
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
        report: report.clone(),
    };
    let mut s = serde_json::to_string_pretty(&doc).map_err(|e| Error::Report(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Parses a document produced by [`render_json`].
pub fn parse_json(text: &str) -> Result<SimReport> {
    let doc: JsonReport =
        serde_json::from_str(text).map_err(|e| Error::Report(format!("not a report: {e}")))?;
    if doc.schema != JSON_SCHEMA {
        return Err(Error::Report(format!(
            "unsupported report schema {}, expected {JSON_SCHEMA}",
            doc.schema
        )));
    }
    Ok(doc.report)
}

fn definition_lines(prefix: &str) -> String {
    DEFINITIONS
        .iter()
        .map(|(k, v)| format!("{prefix}{k}: {v}\n"))
        .collect()
}

pub fn render_csv(report: &SimReport) -> String {
    let mut s = definition_lines("# ");
    s.push_str(CSV_HEADER);
    s.push('\n');
    for l in &report.layers {
        let _ = writeln!(s, "{},{},{},{:e},{:e}", l.layer, l.passes, l.gated, l.energy_j, l.latency_s);
    }
    let _ = writeln!(
        s,
        "total,{},{},{:e},{:e}",
        report.total_passes, report.total_gated, report.total_energy_j, report.total_latency_s
    );
    s
}

pub fn render_text(r: &SimReport) -> String {
    let mut s = definition_lines("# ");
    let _ = writeln!(s, "model: {}", r.model);
    let _ = writeln!(s, "arch (n, m, N, K): {}", r.arch);
    let _ = writeln!(
        s,
        "weight bits: {}, activation bits: {}, exact mode: {}",
        r.quant.weight_bits, r.quant.activation_bits, r.quant.exact_mode
    );
    let _ = writeln!(s, "frames: {}", r.frames);
    let _ = writeln!(
        s,
        "\n{:>6} {:>5} {:>12} {:>12} {:>14} {:>14}",
        "layer", "kind", "passes", "gated", "energy_j", "latency_s"
    );
    for l in &r.layers {
        let kind = match l.kind {
            crate::photonic::UnitKind::Conv => "conv",
            crate::photonic::UnitKind::Fc => "fc",
        };
        let _ = writeln!(
            s,
            "{:>6} {:>5} {:>12} {:>12} {:>14.6e} {:>14.6e}",
            l.layer, kind, l.passes, l.gated, l.energy_j, l.latency_s
        );
    }
    let _ = writeln!(
        s,
        "{:>6} {:>5} {:>12} {:>12} {:>14.6e} {:>14.6e}",
        "total", "", r.total_passes, r.total_gated, r.total_energy_j, r.total_latency_s
    );
    let m = &r.metrics;
    let _ = writeln!(s, "\nbits_processed: {}", r.bits_processed);
    let _ = writeln!(s, "fps: {:.6e}", m.fps);
    let _ = writeln!(s, "avg_power_w: {:.6e}", m.avg_power_w);
    let _ = writeln!(s, "fps_per_watt: {:.6e}", m.fps_per_watt);
    let _ = writeln!(s, "epb_j_per_bit: {:.6e}", m.epb);
    s
}
