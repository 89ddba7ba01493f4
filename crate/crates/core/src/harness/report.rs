use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::config::ReportFormat;
use super::experiment::ExperimentReport;
use super::svg::render_curves;
use crate::error::{Error, Result};
use crate::fmt::format_sig9;
use crate::unlearn::UnlearnTrace;

pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.json";
pub const CURVES_FILE: &str = "curves.svg";

pub const METRICS_COLUMNS: [&str; 9] = [
    "epoch",
    "train_acc",
    "val_acc",
    "test_acc",
    "forget_acc",
    "retain_acc",
    "mia_forget_acc",
    "mia_retain_acc",
    "adversary_success",
];

/// One CSV row per traced epoch. Missing accuracies are written as empty
/// fields.
pub fn render_metrics_csv(trace: &UnlearnTrace) -> Result<String> {
    let mut out = csv::Writer::from_writer(Vec::new());
    let to_csv_err = |e: csv::Error| Error::Parse {
        line: 0,
        message: e.to_string(),
    };
    out.write_record(METRICS_COLUMNS).map_err(to_csv_err)?;
    let opt = |v: Option<f64>| v.map(format_sig9).unwrap_or_default();
    for entry in &trace.entries {
        let m = &entry.metrics;
        let a = &entry.attack;
        out.write_record([
            m.epoch.to_string(),
            format_sig9(m.train_acc),
            opt(m.val_acc),
            opt(m.test_acc),
            opt(m.forget_acc),
            opt(m.retain_acc),
            format_sig9(a.mia_forget_acc),
            format_sig9(a.mia_retain_acc),
            format_sig9(a.adversary_success),
        ])
        .map_err(to_csv_err)?;
    }
    let bytes = out.into_inner().map_err(|e| Error::Parse {
        line: 0,
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn render_report_json(report: &ExperimentReport) -> Result<String> {
    serde_json::to_string_pretty(report).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn read_report_json(path: impl AsRef<Path>) -> Result<ExperimentReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}

/// Writes `bytes` to a temporary file in the target directory, then renames
/// it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Emits the requested formats into `out_dir` and returns the written paths.
///
/// If any write fails, files already written by this call are removed.
pub fn write_report(
    report: &ExperimentReport,
    out_dir: &Path,
    formats: &[ReportFormat],
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut emit = |name: &str, content: Result<String>| -> Result<()> {
        let path = out_dir.join(name);
        write_atomic(&path, content?.as_bytes())?;
        written.push(path);
        Ok(())
    };
    let mut outcome = Ok(());
    let mut seen = Vec::new();
    for &format in formats {
        if seen.contains(&format) {
            continue;
        }
        seen.push(format);
        outcome = match format {
            ReportFormat::Csv => emit(METRICS_FILE, render_metrics_csv(&report.trace)),
            ReportFormat::Json => emit(REPORT_FILE, render_report_json(report)),
            ReportFormat::Svg => emit(CURVES_FILE, Ok(render_curves(report))),
        };
        if outcome.is_err() {
            break;
        }
    }
    match outcome {
        Ok(()) => Ok(written),
        Err(e) => {
            for path in &written {
                let _ = fs::remove_file(path);
            }
            Err(e)
        }
    }
}
