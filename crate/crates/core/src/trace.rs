//! Per-token uncertainty traces (JSONL) and their SVG rendering.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lm::TokenId;
use crate::search::{SamplerState, SearchResult};

/// One generated token of one beam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub beam_id: usize,
    pub step_index: usize,
    /// Offset within the beam's generated tokens, across steps.
    pub token_position: usize,
    pub token_id: TokenId,
    pub token_text: String,
    pub entropy_bits: f64,
    pub varentropy_bits2: f64,
    pub branched: bool,
    pub sampler_state: SamplerState,
    pub entropy_lower_bound: bool,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("no records")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Trace records of every final beam, ordered by (beam id, token position).
pub fn build_trace(result: &SearchResult) -> Vec<TraceRecord> {
    let mut beams: Vec<_> = result.all_beams.iter().collect();
    beams.sort_by_key(|b| b.id);
    beams
        .into_iter()
        .flat_map(|beam| {
            beam.tokens.iter().enumerate().map(move |(pos, t)| TraceRecord {
                beam_id: beam.id,
                step_index: t.step_index,
                token_position: pos,
                token_id: t.token_id,
                token_text: t.text.clone(),
                entropy_bits: t.reading.entropy_bits,
                varentropy_bits2: t.reading.varentropy_bits2,
                branched: t.state == SamplerState::BranchPoint,
                sampler_state: t.state,
                entropy_lower_bound: t.entropy_lower_bound,
            })
        })
        .collect()
}

pub fn write_records<W: Write>(records: &[TraceRecord], sink: &mut W) -> Result<usize, TraceError> {
    for r in records {
        let line = serde_json::to_string(r).expect("trace records serialize");
        sink.write_all(line.as_bytes())?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(records.len())
}

/// Writes one JSON line per trace record; returns the number written.
pub fn emit_trace<W: Write>(result: &SearchResult, sink: &mut W) -> Result<usize, TraceError> {
    write_records(&build_trace(result), sink)
}

/// Parses a JSONL trace. Blank lines are skipped.
pub fn parse_trace<R: BufRead>(reader: R) -> Result<Vec<TraceRecord>, TraceError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| TraceError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    pub show_varentropy: bool,
    pub mark_branches: bool,
    /// Draw a horizontal line at this threshold (skipped when infinite).
    pub threshold: Option<f64>,
    /// Plot only this beam.
    pub beam: Option<usize>,
    pub width: f64,
    pub height: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            show_varentropy: true,
            mark_branches: true,
            threshold: None,
            beam: None,
            width: 960.0,
            height: 360.0,
        }
    }
}

const PALETTE: [&str; 6] = ["#1f5fbf", "#2a9d8f", "#6a4c93", "#e76f51", "#264653", "#8a5a00"];
const VARENTROPY: &str = "#c0392b";
const MARGIN: (f64, f64, f64, f64) = (56.0, 20.0, 24.0, 40.0); // left, right, top, bottom

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders entropy (and optionally varentropy) against token position, one
/// polyline per beam, with branch points marked and the threshold drawn.
/// The output is a pure function of the records and options.
pub fn render_svg(records: &[TraceRecord], opts: &RenderOptions) -> Result<String, TraceError> {
    let records: Vec<&TraceRecord> = records
        .iter()
        .filter(|r| opts.beam.is_none_or(|b| r.beam_id == b))
        .collect();
    if records.is_empty() {
        return Err(TraceError::Empty);
    }
    let max_x = records.iter().map(|r| r.token_position).max().unwrap_or(0).max(1) as f64;
    let threshold = opts.threshold.filter(|t| t.is_finite());
    let mut max_y = records.iter().map(|r| r.entropy_bits).fold(0.0, f64::max);
    if opts.show_varentropy {
        max_y = records.iter().map(|r| r.varentropy_bits2).fold(max_y, f64::max);
    }
    if let Some(t) = threshold {
        max_y = max_y.max(t);
    }
    let max_y = (max_y * 1.1).max(1.0);
    let (ml, mr, mt, mb) = MARGIN;
    let (w, h) = (opts.width, opts.height);
    let pw = w - ml - mr;
    let ph = h - mt - mb;
    let x = |pos: usize| ml + pw * pos as f64 / max_x;
    let y = |v: f64| mt + ph * (1.0 - v / max_y);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w:.0}" height="{h:.0}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r##"<g class="axes" stroke="#444" stroke-width="1"><line x1="{ml:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/><line x1="{ml:.2}" y1="{mt:.2}" x2="{ml:.2}" y2="{:.2}"/></g>"##,
        mt + ph,
        ml + pw,
        mt + ph,
        mt + ph
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">token position</text>"#,
        ml + pw / 2.0,
        h - 8.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.2})">bits</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0
    );
    for tick in 0..=4 {
        let v = max_y * tick as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{v:.2}</text>"#,
            ml - 6.0,
            y(v) + 3.0
        );
    }
    if let Some(t) = threshold {
        let _ = writeln!(
            svg,
            r##"<line class="threshold" x1="{ml:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#888" stroke-dasharray="6 4"/>"##,
            y(t),
            ml + pw,
            y(t)
        );
    }

    let mut beam_ids: Vec<usize> = records.iter().map(|r| r.beam_id).collect();
    beam_ids.dedup();
    beam_ids.sort_unstable();
    beam_ids.dedup();
    for (k, beam) in beam_ids.iter().enumerate() {
        let rows: Vec<&&TraceRecord> = records.iter().filter(|r| r.beam_id == *beam).collect();
        let colour = PALETTE[k % PALETTE.len()];
        let line = |value: fn(&TraceRecord) -> f64| {
            rows.iter()
                .map(|r| format!("{:.2},{:.2}", x(r.token_position), y(value(r))))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let _ = writeln!(
            svg,
            r#"<polyline class="entropy" data-beam="{beam}" fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            line(|r| r.entropy_bits)
        );
        if opts.show_varentropy {
            let _ = writeln!(
                svg,
                r#"<polyline class="varentropy" data-beam="{beam}" fill="none" stroke="{VARENTROPY}" stroke-width="1" stroke-opacity="0.7" points="{}"/>"#,
                line(|r| r.varentropy_bits2)
            );
        }
        if opts.mark_branches {
            for r in rows.iter().filter(|r| r.branched) {
                let _ = writeln!(
                    svg,
                    r#"<circle class="branch-marker" data-beam="{beam}" cx="{:.2}" cy="{:.2}" r="4" fill="{colour}"><title>{}</title></circle>"#,
                    x(r.token_position),
                    y(r.entropy_bits),
                    escape(&format!(
                        "beam {beam} step {} token {:?} H={:.3}",
                        r.step_index, r.token_text, r.entropy_bits
                    ))
                );
            }
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
