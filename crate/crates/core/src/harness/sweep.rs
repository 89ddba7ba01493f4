use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiment::{run_experiment, ExperimentReport};
use super::report::write_atomic;
use crate::error::{Error, Result};
use crate::fmt::format_sig9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SweepOutcome {
    Completed {
        report: Box<ExperimentReport>,
    },
    Failed {
        phase: Option<String>,
        message: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub learning_rate: f64,
    pub outcome: SweepOutcome,
}

impl SweepEntry {
    pub fn report(&self) -> Option<&ExperimentReport> {
        match &self.outcome {
            SweepOutcome::Completed { report } => Some(report),
            SweepOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
}

/// Output subdirectory name for one rate.
pub fn rate_dir_name(rate: f64) -> String {
    format!("lr_{}", format_sig9(rate))
}

pub fn check_rates(rates: &[f64]) -> Result<()> {
    if rates.is_empty() {
        return Err(Error::Config("learning-rate list is empty".into()));
    }
    if let Some(bad) = rates.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
        return Err(Error::Config(format!(
            "learning rate {bad} is not positive"
        )));
    }
    if let Some(w) = rates.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!(
            "learning rates must be strictly increasing, got {} then {}",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// Runs one experiment per unlearning rate, all with the same seeds, each
/// writing into its own subdirectory of `base.output_dir`. A failing rate is
/// recorded and the others still run. Writes `sweep.json` and `sweep.csv`.
pub fn sensitivity_sweep(base: &ExperimentConfig, rates: &[f64]) -> Result<SweepReport> {
    check_rates(rates)?;
    base.validate()?;
    let entries = rates
        .par_iter()
        .map(|&rate| {
            let config = ExperimentConfig {
                method: base.method.with_learning_rate(rate),
                output_dir: base.output_dir.join(rate_dir_name(rate)),
                ..base.clone()
            };
            let outcome = match run_experiment(&config) {
                Ok(report) => SweepOutcome::Completed {
                    report: Box::new(report),
                },
                Err(e) => SweepOutcome::Failed {
                    phase: e.phase().map(str::to_string),
                    message: e.to_string(),
                },
            };
            SweepEntry {
                learning_rate: rate,
                outcome,
            }
        })
        .collect();
    let report = SweepReport { entries };
    write_sweep(&report, &base.output_dir)?;
    Ok(report)
}

/// Per-rate terminal scores as CSV.
pub fn render_sweep_csv(report: &SweepReport) -> String {
    let mut out = String::from(
        "learning_rate,status,forget_acc,test_acc,mia_forget_acc,mia_retain_acc,adversary_success\n",
    );
    for entry in &report.entries {
        let rate = format_sig9(entry.learning_rate);
        match entry.report() {
            Some(r) => {
                let (m, a) = r.terminal();
                let opt = |v: Option<f64>| v.map(format_sig9).unwrap_or_default();
                out.push_str(&format!(
                    "{rate},completed,{},{},{},{},{}\n",
                    opt(m.forget_acc),
                    opt(m.test_acc),
                    format_sig9(a.mia_forget_acc),
                    format_sig9(a.mia_retain_acc),
                    format_sig9(a.adversary_success)
                ));
            }
            None => out.push_str(&format!("{rate},failed,,,,,\n")),
        }
    }
    out
}

fn write_sweep(report: &SweepReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    write_atomic(&dir.join("sweep.json"), json.as_bytes())?;
    write_atomic(&dir.join("sweep.csv"), render_sweep_csv(report).as_bytes())
}
