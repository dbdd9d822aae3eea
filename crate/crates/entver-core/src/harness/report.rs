//! Report emission: JSONL, CSV and a human-readable table.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Classification, ExpectedOutcome, RunReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Jsonl,
    Csv,
    #[default]
    Table,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "jsonl" => Ok(ReportFormat::Jsonl),
            "csv" => Ok(ReportFormat::Csv),
            "table" => Ok(ReportFormat::Table),
            other => Err(format!("unknown format {other:?} (jsonl|csv|table)")),
        }
    }
}

/// One JSON object per scenario, in order. Deterministic for a fixed
/// master seed: wall time is excluded from the record.
pub fn emit_jsonl(reports: &[RunReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r).expect("report serializes"));
        out.push('\n');
    }
    out
}

fn classification_str(c: Classification) -> &'static str {
    match c {
        Classification::TruePositive => "true-positive",
        Classification::TrueNegative => "true-negative",
        Classification::Fooled => "fooled",
        Classification::Missed => "missed",
    }
}

fn expected_str(e: ExpectedOutcome) -> &'static str {
    match e {
        ExpectedOutcome::Certify => "certify",
        ExpectedOutcome::Refuse => "refuse",
        ExpectedOutcome::Fooled => "fooled",
    }
}

fn verdict_str(r: &RunReport) -> &'static str {
    match r.report.verdict {
        crate::protocols::Verdict::Entangled => "entangled",
        crate::protocols::Verdict::Inconclusive => "inconclusive",
    }
}

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Flat columns: scenario, protocol, verdict, statistic, threshold,
/// stderr, ground_truth_entanglement, classification, c1..c5, seed, shots.
pub fn emit_csv(reports: &[RunReport]) -> String {
    let mut out = String::from(
        "scenario,protocol,verdict,statistic,threshold,stderr,ground_truth_entanglement,\
         classification,c1,c2,c3,c4,c5,seed,shots\n",
    );
    for r in reports {
        let a = &r.report.criteria_audit;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            csv_escape(&r.scenario),
            r.report.protocol,
            verdict_str(r),
            r.report.statistic,
            r.report.threshold,
            r.report.stderr,
            r.ground_truth_entanglement,
            classification_str(r.classification),
            a.c1,
            a.c2,
            a.c3,
            a.c4,
            a.c5,
            r.seed,
            r.report.shots,
        );
    }
    out
}

/// Human-readable summary; fooled scenarios are listed under a separate
/// criteria-violation heading.
pub fn emit_table(reports: &[RunReport]) -> String {
    let mut out = String::new();
    let width = reports
        .iter()
        .map(|r| r.scenario.len())
        .max()
        .unwrap_or(8)
        .max(8);
    let header = format!(
        "{:<width$}  {:>12}  {:>10} {:>10} {:>9}  {:<14} {:<8} {:<6} {}",
        "scenario",
        "verdict",
        "statistic",
        "threshold",
        "stderr",
        "classification",
        "expected",
        "match",
        "criteria"
    );
    let rule = "-".repeat(header.len());
    let fmt_row = |r: &RunReport| {
        let violations = r.report.criteria_audit.violations();
        let criteria = if violations.is_empty() {
            "ok".to_string()
        } else {
            format!(
                "violates {}",
                violations
                    .iter()
                    .map(|c| format!("C{c}"))
                    .collect::<Vec<_>>()
                    .join(",")
            )
        };
        format!(
            "{:<width$}  {:>12}  {:>10.4} {:>10.4} {:>9.4}  {:<14} {:<8} {:<6} {}",
            r.scenario,
            verdict_str(r),
            r.report.statistic,
            r.report.threshold,
            r.report.stderr,
            classification_str(r.classification),
            expected_str(r.expected),
            if r.matched { "yes" } else { "NO" },
            criteria,
        )
    };

    let (demos, regular): (Vec<&RunReport>, Vec<&RunReport>) = reports
        .iter()
        .partition(|r| r.expected == ExpectedOutcome::Fooled);

    out.push_str(&header);
    out.push('\n');
    out.push_str(&rule);
    out.push('\n');
    for r in &regular {
        out.push_str(&fmt_row(r));
        out.push('\n');
    }
    if !demos.is_empty() {
        out.push_str("\nCRITERIA VIOLATION DEMOS\n");
        out.push_str(&rule);
        out.push('\n');
        for r in &demos {
            out.push_str(&fmt_row(r));
            out.push('\n');
        }
    }
    let matched = reports.iter().filter(|r| r.matched).count();
    let _ = writeln!(
        out,
        "\n{matched}/{} scenarios matched their expected outcome",
        reports.len()
    );
    out
}

/// Writes `report.jsonl` and `report.csv` under `out_dir`.
pub fn write_reports(reports: &[RunReport], out_dir: &Path) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("no reports to write".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("report.jsonl"), emit_jsonl(reports))?;
    std::fs::write(out_dir.join("report.csv"), emit_csv(reports))?;
    Ok(())
}
