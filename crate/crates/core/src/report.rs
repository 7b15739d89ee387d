//! JSON reports and CSV sweep rows.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{ExecutionRecord, MilpRecord, Outcome, SubsetRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub method: String,
    pub property: String,
    pub k: usize,
    pub epsilon: f64,
    pub bound: usize,
    pub executions: Vec<ExecutionRecord>,
    pub subsets: Vec<SubsetRecord>,
    pub milp: Option<MilpRecord>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timings_sec: Option<BTreeMap<String, f64>>,
}

impl VerificationReport {
    pub fn from_outcome(outcome: &Outcome, with_timings: bool) -> Self {
        VerificationReport {
            method: outcome.method.to_string(),
            property: outcome.kind.to_string(),
            k: outcome.k,
            epsilon: outcome.epsilon,
            bound: outcome.bound,
            executions: outcome.executions.clone(),
            subsets: outcome.subsets.clone(),
            milp: outcome.milp.clone(),
            timings_sec: with_timings.then(|| outcome.timings.clone()),
        }
    }

    pub fn total_seconds(&self) -> f64 {
        self.timings_sec.as_ref().map_or(0.0, |t| t.values().sum())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    method: &'a str,
    epsilon: f64,
    k: usize,
    bound: usize,
    seconds: f64,
}

/// Appends one sweep row, writing the header when the file is new or empty.
pub fn append_csv(report: &VerificationReport, path: &Path) -> Result<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    w.serialize(CsvRow {
        method: &report.method,
        epsilon: report.epsilon,
        k: report.k,
        bound: report.bound,
        seconds: report.total_seconds(),
    })
    .map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    w.flush().map_err(io_err(path))
}

/// Writes the JSON report and, if requested, appends the CSV row.
pub fn emit_reports(report: &VerificationReport, out: &Path, csv: Option<&Path>) -> Result<()> {
    fs::write(out, report.to_json()).map_err(io_err(out))?;
    if let Some(path) = csv {
        append_csv(report, path)?;
    }
    Ok(())
}
