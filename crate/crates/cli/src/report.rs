use std::collections::BTreeMap;
use std::fmt::Write as _;

use saekit::autonaming::{rank_findings, ConceptFinding, ReportRow};

use crate::config::{PipelineConfig, FINDINGS_FILE, REPORT_CSV_FILE, REPORT_TXT_FILE};
use crate::error::CliError;
use crate::files::read_jsonl;

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub threshold: f64,
    pub csv: String,
    pub table: String,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Lowest and highest per-repeat accuracy of each neuron's finding. A single
/// run gives a zero-width range.
pub fn accuracy_ranges(findings: &[ConceptFinding]) -> BTreeMap<usize, (f64, f64)> {
    findings
        .iter()
        .map(|f| {
            let lo = f
                .repeat_accuracies
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            let hi = f
                .repeat_accuracies
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            let range = if f.repeat_accuracies.is_empty() {
                (f.detection_accuracy, f.detection_accuracy)
            } else {
                (lo, hi)
            };
            (f.neuron_id, range)
        })
        .collect()
}

fn range_of(ranges: &BTreeMap<usize, (f64, f64)>, r: &ReportRow) -> (f64, f64) {
    ranges
        .get(&r.neuron_id)
        .copied()
        .unwrap_or((r.accuracy, r.accuracy))
}

pub fn render_csv(rows: &[ReportRow], ranges: &BTreeMap<usize, (f64, f64)>) -> String {
    let mut out = String::from("rank,neuron,accuracy,accuracy_min,accuracy_max,concept\n");
    for (i, r) in rows.iter().enumerate() {
        let (lo, hi) = range_of(ranges, r);
        let _ = writeln!(
            out,
            "{},{},{:.4},{lo:.4},{hi:.4},{}",
            i + 1,
            r.neuron_id,
            r.accuracy,
            csv_field(&r.concept_text)
        );
    }
    out
}

/// Aligned text table. A range column appears only when some row comes from
/// repeated runs that disagree.
pub fn render_table(
    rows: &[ReportRow],
    ranges: &BTreeMap<usize, (f64, f64)>,
    threshold: f64,
) -> String {
    let nw = rows
        .iter()
        .map(|r| r.neuron_id.to_string().len())
        .max()
        .unwrap_or(0)
        .max("Neuron".len());
    let show_range = rows.iter().any(|r| {
        let (lo, hi) = range_of(ranges, r);
        lo != hi
    });
    let mut out = String::new();
    if show_range {
        let _ = writeln!(
            out,
            "{:>nw$}  {:>8}  {:>11}  Concept",
            "Neuron", "Accuracy", "Range"
        );
    } else {
        let _ = writeln!(out, "{:>nw$}  {:>8}  Concept", "Neuron", "Accuracy");
    }
    for r in rows {
        if show_range {
            let (lo, hi) = range_of(ranges, r);
            let _ = writeln!(
                out,
                "{:>nw$}  {:>8.2}  {:>11}  {}",
                r.neuron_id,
                r.accuracy,
                format!("{lo:.2}-{hi:.2}"),
                r.concept_text
            );
        } else {
            let _ = writeln!(
                out,
                "{:>nw$}  {:>8.2}  {}",
                r.neuron_id, r.accuracy, r.concept_text
            );
        }
    }
    let _ = writeln!(
        out,
        "{} neuron(s) with detection accuracy >= {:.2}",
        rows.len(),
        threshold
    );
    out
}

/// Ranked, deduplicated findings at or above the configured threshold,
/// written as CSV and as an aligned text table.
pub fn cmd_report(cfg: &PipelineConfig) -> Result<Report, CliError> {
    let path = cfg.out(FINDINGS_FILE);
    cfg.require_inputs(&[("findings (run name first)", path.clone())])?;
    let findings: Vec<ConceptFinding> = read_jsonl(&path)?;
    let threshold = cfg.naming.threshold;
    let rows = rank_findings(&findings, threshold);
    let ranges = accuracy_ranges(&findings);
    let csv = render_csv(&rows, &ranges);
    let table = render_table(&rows, &ranges, threshold);
    std::fs::write(cfg.out(REPORT_CSV_FILE), &csv)?;
    std::fs::write(cfg.out(REPORT_TXT_FILE), &table)?;
    Ok(Report {
        rows,
        threshold,
        csv,
        table,
    })
}
