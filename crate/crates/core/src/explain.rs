//! Per-word attention reports and a self-contained HTML heatmap.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::EhrRecord;
use crate::error::{LerpError, Result};
use crate::model::Model;

/// Normalized attention for one record. Scores are percentages: the
/// record's largest raw weight maps to 100 and its smallest to 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub record_id: String,
    pub variant: String,
    pub tokens: Vec<String>,
    /// Event-guided branch.
    pub event_scores: Vec<f64>,
    /// Label-dependent branch.
    pub label_scores: Vec<f64>,
    pub raw_event_attention: Vec<f64>,
    pub raw_label_attention: Vec<f64>,
    pub labels: Vec<String>,
    pub probabilities: Vec<f64>,
}

/// Min-max scaling to `[0, 100]`. A constant input maps to all 100.
pub fn normalize_percent(raw: &[f64]) -> Vec<f64> {
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    raw.iter()
        .map(|&a| {
            if span > 0.0 {
                100.0 * ((a - min) / span)
            } else {
                100.0
            }
        })
        .collect()
}

pub fn explain_record(model: &Model, record: &EhrRecord) -> Result<AttentionReport> {
    let encoded = model.encode(record);
    let out = model.forward(&encoded)?;
    let n = encoded.note.len();
    if out.alpha_e.len() != n || out.alpha_y.len() != n {
        return Err(LerpError::Contract(
            "attention length differs from note length".into(),
        ));
    }
    Ok(AttentionReport {
        record_id: record.id.clone(),
        variant: model.config.variant.to_string(),
        tokens: record.note[..n].to_vec(),
        event_scores: normalize_percent(&out.alpha_e),
        label_scores: normalize_percent(&out.alpha_y),
        raw_event_attention: out.alpha_e,
        raw_label_attention: out.alpha_y,
        labels: model.catalog.names().to_vec(),
        probabilities: out.y_hat,
    })
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn heat_row(out: &mut String, title: &str, tokens: &[String], scores: &[f64]) {
    writeln!(out, "<tr><th>{}</th><td class=\"note\">", escape(title)).unwrap();
    for (t, s) in tokens.iter().zip(scores) {
        write!(
            out,
            "<span style=\"background-color: rgba(220, 0, 0, {:.3})\" title=\"{:.1}%\">{}</span> ",
            s / 100.0,
            s,
            escape(t)
        )
        .unwrap();
    }
    out.push_str("</td></tr>\n");
}

/// Standalone HTML page: one row per branch, each token shaded red by its
/// normalized score. No external resources.
pub fn render_html(report: &AttentionReport) -> String {
    let mut out = String::new();
    out.push_str("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">\n");
    writeln!(
        out,
        "<title>Attention: {}</title>",
        escape(&report.record_id)
    )
    .unwrap();
    out.push_str(
        "<style>\nbody { font-family: sans-serif; margin: 2em; }\n\
         table { border-collapse: collapse; }\n\
         th { text-align: left; vertical-align: top; padding: 0.4em 1em 0.4em 0; white-space: nowrap; }\n\
         td.note { line-height: 1.8; padding: 0.4em 0; }\n\
         span { padding: 0.1em 0.15em; border-radius: 2px; }\n\
         .scale { display: inline-block; width: 200px; height: 12px; \
         background: linear-gradient(to right, rgba(220,0,0,0), rgba(220,0,0,1)); vertical-align: middle; }\n\
         </style>\n</head><body>\n",
    );
    writeln!(
        out,
        "<h1>Record {}</h1>\n<p>Model: {}. Scale: 0% <span class=\"scale\"></span> 100%</p>",
        escape(&report.record_id),
        escape(&report.variant)
    )
    .unwrap();
    out.push_str("<table>\n");
    heat_row(
        &mut out,
        "Event-guided",
        &report.tokens,
        &report.event_scores,
    );
    heat_row(
        &mut out,
        "Label-dependent",
        &report.tokens,
        &report.label_scores,
    );
    out.push_str("</table>\n<h2>Predicted risks</h2>\n<table>\n");
    for (name, p) in report.labels.iter().zip(&report.probabilities) {
        writeln!(out, "<tr><th>{}</th><td>{:.4}</td></tr>", escape(name), p).unwrap();
    }
    out.push_str("</table>\n</body></html>\n");
    out
}
