use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{RunMetrics, REPORT_SCHEMA_VERSION};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub runs: Vec<RunMetrics>,
}

impl Report {
    pub fn new(runs: Vec<RunMetrics>) -> Self {
        Report {
            schema_version: REPORT_SCHEMA_VERSION,
            runs,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Report = serde_json::from_str(text).map_err(|e| Error::Format(format!("bad report: {e}")))?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Version {
                expected: REPORT_SCHEMA_VERSION.to_string(),
                found: r.schema_version.to_string(),
            });
        }
        Ok(r)
    }
}

/// CSV and markdown column order.
pub const REPORT_COLUMNS: [&str; 13] = [
    "method",
    "layer",
    "target",
    "n",
    "success_rate",
    "logic_violation_rate",
    "parse_failure_rate",
    "valid_rate",
    "mean_attribute_score",
    "mean_length",
    "mean_adjacency",
    "mean_jsd",
    "mean_steps",
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn rows(report: &Report) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for run in &report.runs {
        for t in &run.per_target {
            out.push(vec![
                run.method.to_string(),
                run.layer.to_string(),
                t.target.to_string(),
                t.n.to_string(),
                t.success_rate.to_string(),
                t.logic_violation_rate.to_string(),
                t.parse_failure_rate.to_string(),
                t.valid_rate.to_string(),
                opt(t.mean_attribute_score),
                opt(t.mean_length),
                opt(t.mean_adjacency),
                t.mean_jsd.to_string(),
                t.mean_steps.to_string(),
            ]);
        }
    }
    out
}

/// Serialises a report. JSON is lossless; CSV and markdown have one row per (method, target).
pub fn emit_report(report: &Report, format: ReportFormat) -> Result<String> {
    Ok(match format {
        ReportFormat::Json => serde_json::to_string_pretty(report)? + "\n",
        ReportFormat::Csv => {
            let mut s = REPORT_COLUMNS.join(",") + "\n";
            for r in rows(report) {
                s += &r.join(",");
                s.push('\n');
            }
            s
        }
        ReportFormat::Markdown => {
            let mut s = format!("| {} |\n|{}\n", REPORT_COLUMNS.join(" | "), "---|".repeat(REPORT_COLUMNS.len()));
            for r in rows(report) {
                let cells: Vec<String> = r
                    .iter()
                    .map(|c| match c.parse::<f64>() {
                        Ok(v) if c.contains('.') => format!("{v:.4}"),
                        _ => c.clone(),
                    })
                    .collect();
                let _ = writeln!(s, "| {} |", cells.join(" | "));
            }
            s
        }
    })
}

/// Config and artifact digests written next to every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub config: serde_json::Value,
    /// File name to lowercase hex SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(seed: u64, config: serde_json::Value) -> Self {
        Manifest {
            schema_version: REPORT_SCHEMA_VERSION,
            seed,
            config,
            artifacts: BTreeMap::new(),
        }
    }

    pub fn add_file(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let name = path
            .file_name()
            .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        self.artifacts.insert(name, sha256_hex(&bytes));
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
