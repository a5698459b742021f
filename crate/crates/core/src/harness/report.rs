//! Tables and plot-ready series in CSV, JSON Lines, or Markdown.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::{json, Value};

use super::compare::ComparisonReport;
use crate::collect::StepRecord;
use crate::diversity::{csv_io, CorrelationMatrix};
use crate::schedule::AccuracyLrCurve;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Jsonl,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Jsonl => "jsonl",
            ReportFormat::Markdown => "md",
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "jsonl" => Ok(ReportFormat::Jsonl),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(Error::config(format!("unknown report format {other:?}"))),
        }
    }
}

/// A header plus rows of JSON scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

fn cell_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Self {
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        assert_eq!(
            row.len(),
            self.headers.len(),
            "row width must match the header"
        );
        self.rows.push(row);
    }

    pub fn write<W: Write>(&self, format: ReportFormat, mut out: W) -> Result<()> {
        match format {
            ReportFormat::Csv => {
                let mut w = csv::Writer::from_writer(out);
                w.write_record(&self.headers).map_err(csv_io)?;
                for row in &self.rows {
                    w.write_record(row.iter().map(cell_text)).map_err(csv_io)?;
                }
                w.flush()?;
            }
            ReportFormat::Jsonl => {
                // Fields keep header order, which a JSON map would not.
                for row in &self.rows {
                    let fields = self
                        .headers
                        .iter()
                        .zip(row)
                        .map(|(h, v)| {
                            Ok(format!(
                                "{}:{}",
                                serde_json::to_string(h)?,
                                serde_json::to_string(v)?
                            ))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    writeln!(out, "{{{}}}", fields.join(","))?;
                }
                out.flush()?;
            }
            ReportFormat::Markdown => {
                writeln!(out, "| {} |", self.headers.join(" | "))?;
                writeln!(out, "|{}", "---|".repeat(self.headers.len()))?;
                for row in &self.rows {
                    let cells: Vec<String> = row.iter().map(cell_text).collect();
                    writeln!(out, "| {} |", cells.join(" | "))?;
                }
                out.flush()?;
            }
        }
        Ok(())
    }

    pub fn to_string(&self, format: ReportFormat) -> Result<String> {
        let mut buf = Vec::new();
        self.write(format, &mut buf)?;
        Ok(String::from_utf8(buf).expect("tables are UTF-8"))
    }
}

pub fn comparison_table(report: &ComparisonReport) -> Table {
    let mut t = Table::new(&[
        "method",
        "ensemble_acc",
        "best_single_acc",
        "improvement",
        "avg_steps_per_member",
        "ensemble_size",
    ]);
    for r in &report.rows {
        t.push(vec![
            json!(r.method.as_str()),
            json!(r.ensemble_acc),
            json!(r.best_single_acc),
            json!(r.improvement),
            json!(r.avg_steps_per_member),
            json!(r.ensemble_size),
        ]);
    }
    t
}

/// `step, phase, lr, event` for every logged step.
pub fn lr_series(log: &[StepRecord]) -> Table {
    let mut t = Table::new(&["step", "phase", "lr", "event"]);
    for r in log {
        t.push(vec![
            json!(r.step),
            json!(r.phase),
            json!(r.lr),
            r.event.map_or(Value::Null, |e| {
                serde_json::to_value(e).expect("enum serializes")
            }),
        ]);
    }
    t
}

pub fn accuracy_lr_series(curve: &AccuracyLrCurve) -> Table {
    let mut t = Table::new(&["lr", "accuracy"]);
    for p in &curve.points {
        t.push(vec![json!(p.lr), json!(p.accuracy)]);
    }
    t
}

/// Inputs to [`emit_report`]. Every field is optional so partial runs can be reported.
#[derive(Debug, Clone, Default)]
pub struct RunArtifacts {
    pub comparison: Option<ComparisonReport>,
    /// Step logs keyed by a name used in the output file name.
    pub logs: Vec<(String, Vec<StepRecord>)>,
    pub range_scan: Option<AccuracyLrCurve>,
    /// Correlation matrices with their member ids.
    pub correlations: Vec<(String, Vec<String>, CorrelationMatrix)>,
}

/// Writes every available table into `dir` and returns the written paths.
///
/// Correlation matrices are always CSV. Wall-clock timings go to
/// `timing.json`, the only output that varies between identical runs.
pub fn emit_report(
    artifacts: &RunArtifacts,
    format: ReportFormat,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let ext = format.extension();
    let mut written = Vec::new();
    let mut emit = |name: String, table: &Table| -> Result<()> {
        let path = dir.join(format!("{name}.{ext}"));
        table.write(format, fs::File::create(&path)?)?;
        written.push(path);
        Ok(())
    };
    if let Some(report) = &artifacts.comparison {
        emit("comparison".into(), &comparison_table(report))?;
        if !report.failures.is_empty() {
            let mut t = Table::new(&["method", "error"]);
            for f in &report.failures {
                t.push(vec![json!(f.method.as_str()), json!(f.error)]);
            }
            emit("failures".into(), &t)?;
        }
    }
    for (name, log) in &artifacts.logs {
        emit(format!("lr_vs_step_{name}"), &lr_series(log))?;
    }
    if let Some(curve) = &artifacts.range_scan {
        emit("accuracy_vs_lr".into(), &accuracy_lr_series(curve))?;
    }
    for (name, ids, matrix) in &artifacts.correlations {
        let path = dir.join(format!("correlation_{name}.csv"));
        matrix.write_csv(ids, fs::File::create(&path)?)?;
        written.push(path);
    }
    if let Some(report) = &artifacts.comparison {
        let timing: serde_json::Map<String, Value> = report
            .timings
            .iter()
            .map(|(m, d)| (m.as_str().to_string(), json!(d.as_secs_f64())))
            .collect();
        let path = dir.join("timing.json");
        fs::write(&path, serde_json::to_string_pretty(&timing)? + "\n")?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> Table {
        let mut t = Table::new(&["method", "acc"]);
        t.push(vec![json!("ae"), json!(0.9)]);
        t.push(vec![json!("sse"), json!(0.85)]);
        t
    }

    #[test]
    fn formats() {
        let t = table();
        assert_eq!(
            t.to_string(ReportFormat::Csv).unwrap(),
            "method,acc\nae,0.9\nsse,0.85\n"
        );
        assert_eq!(
            t.to_string(ReportFormat::Jsonl).unwrap(),
            "{\"method\":\"ae\",\"acc\":0.9}\n{\"method\":\"sse\",\"acc\":0.85}\n"
        );
        let md = t.to_string(ReportFormat::Markdown).unwrap();
        assert_eq!(md.lines().count(), 4);
        assert!(md.starts_with("| method | acc |\n|---|---|\n"));
    }

    #[test]
    fn format_names() {
        assert_eq!(
            "md".parse::<ReportFormat>().unwrap(),
            ReportFormat::Markdown
        );
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
