//! Report emission: CSV table, JSON mirror and plot-ready series.
//!
//! CSV and JSON rows are both produced from [`FlatRow`], so they agree field
//! by field. No timestamps are written; identical inputs give identical bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::Format;
use crate::scenario::{ExperimentReport, ExperimentTemplate, ReportRow};
use crate::{Error, Result};

/// CSV column order.
pub const COLUMNS: [&str; 13] = [
    "phase",
    "platform",
    "attacker_output_gain_db",
    "attacker_input_gain_db",
    "legit_input_gain_db",
    "ber_percent",
    "nonzero_ber_fraction",
    "delta_snr_db",
    "power_median",
    "power_q1",
    "power_q3",
    "receiver_profile",
    "seed",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlatRow {
    pub phase: String,
    pub platform: String,
    pub attacker_output_gain_db: Option<f64>,
    pub attacker_input_gain_db: Option<f64>,
    pub legit_input_gain_db: f64,
    pub ber_percent: f64,
    pub nonzero_ber_fraction: f64,
    pub delta_snr_db: f64,
    pub power_median: f64,
    pub power_q1: f64,
    pub power_q3: f64,
    pub receiver_profile: String,
    pub seed: u64,
}

impl From<&ReportRow> for FlatRow {
    fn from(r: &ReportRow) -> Self {
        Self {
            phase: r.phase.to_string(),
            platform: r.platform.to_string(),
            attacker_output_gain_db: r.attacker_output_gain_db,
            attacker_input_gain_db: r.attacker_input_gain_db,
            legit_input_gain_db: r.legit_input_gain_db,
            ber_percent: r.ber_percent,
            nonzero_ber_fraction: r.nonzero_ber_fraction,
            delta_snr_db: r.delta_snr_db,
            power_median: r.power.median,
            power_q1: r.power.q1,
            power_q3: r.power.q3,
            receiver_profile: r.receiver_profile.to_string(),
            seed: r.seed,
        }
    }
}

impl FlatRow {
    fn cells(&self) -> [String; 13] {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            self.phase.clone(),
            self.platform.clone(),
            opt(self.attacker_output_gain_db),
            opt(self.attacker_input_gain_db),
            self.legit_input_gain_db.to_string(),
            self.ber_percent.to_string(),
            self.nonzero_ber_fraction.to_string(),
            self.delta_snr_db.to_string(),
            self.power_median.to_string(),
            self.power_q1.to_string(),
            self.power_q3.to_string(),
            self.receiver_profile.clone(),
            self.seed.to_string(),
        ]
    }
}

/// Report table as CSV text: header, reference row, grid rows.
pub fn report_csv(report: &ExperimentReport) -> String {
    let mut s = COLUMNS.join(",");
    s.push('\n');
    for row in report.all_rows() {
        s.push_str(&FlatRow::from(row).cells().join(","));
        s.push('\n');
    }
    s
}

/// Grid value of a row under the report's template.
fn grid_value(template: ExperimentTemplate, row: &ReportRow) -> Option<f64> {
    match template {
        ExperimentTemplate::OutputGain => row.attacker_output_gain_db,
        ExperimentTemplate::InputGain => row.attacker_input_gain_db,
        ExperimentTemplate::LegitGain => Some(row.legit_input_gain_db),
    }
}

/// Plot series: grid value against delta-SNR and BER, grid rows only.
pub fn series_csv(report: &ExperimentReport) -> String {
    let mut s = String::from("grid_db,delta_snr_db,ber_percent\n");
    for row in &report.rows {
        let g = grid_value(report.template, row).map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{g},{},{}", row.delta_snr_db, row.ber_percent);
    }
    s
}

#[derive(Serialize)]
struct JsonReport<'a> {
    template: ExperimentTemplate,
    columns: &'a [&'a str],
    rows: Vec<FlatRow>,
    details: Vec<&'a ReportRow>,
}

pub fn report_json(report: &ExperimentReport) -> Result<String> {
    let doc = JsonReport {
        template: report.template,
        columns: &COLUMNS,
        rows: report.all_rows().map(FlatRow::from).collect(),
        details: report.all_rows().collect(),
    };
    serde_json::to_string_pretty(&doc)
        .map(|s| s + "\n")
        .map_err(|e| Error::Serialize(e.to_string()))
}

/// Write the report under `dir` as `<stem>.csv`, `<stem>.json` and
/// `<stem>_series.csv`, depending on `formats`. Returns the written paths.
pub fn emit_report(
    report: &ExperimentReport,
    dir: &Path,
    stem: &str,
    formats: &[Format],
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String, text: String| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        written.push(p);
        Ok(())
    };
    if formats.contains(&Format::Csv) {
        put(format!("{stem}.csv"), report_csv(report))?;
        put(format!("{stem}_series.csv"), series_csv(report))?;
    }
    if formats.contains(&Format::Json) {
        put(format!("{stem}.json"), report_json(report)?)?;
    }
    Ok(written)
}
