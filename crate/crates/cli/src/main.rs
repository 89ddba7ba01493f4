use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use unlearn_audit::data::{save_tabular, TabularFormat};
use unlearn_audit::harness::{
    build_attack, execute, load_dataset, partition, read_config_map, read_report_json,
    render_sweep_csv, run_experiment, sensitivity_sweep, train_target, write_atomic, write_report,
    ExperimentConfig, ExperimentReport, ReportFormat, SweepOutcome, REPORT_FILE,
};
use unlearn_audit::Error;

const OUT_ENV: &str = "UNLEARN_AUDIT_OUT";

#[derive(Parser)]
#[command(
    name = "unlearn-audit",
    version,
    about = "Machine unlearning runs audited by membership inference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Materialize the configured dataset to a file.
    GenData {
        #[command(flatten)]
        common: Common,
        /// csv or bin
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Write the row partition to splits.json.
    Split(Common),
    /// Train the target and write target.json.
    Train(Common),
    /// Train shadows and the attack model, write attack.json.
    Attack(Common),
    /// Run unlearning and write the report plus the unlearned model.
    Unlearn(Common),
    /// Full experiment, report only.
    Run(Common),
    /// Repeat the experiment for each unlearning rate.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated, strictly increasing learning rates.
        #[arg(long, value_delimiter = ',', required = true)]
        rates: Vec<f64>,
    },
    /// Re-render artifacts from a saved report.json.
    Report {
        /// Saved report; defaults to <out>/report.json.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "csv,svg")]
        formats: Vec<String>,
    },
}

#[derive(Args)]
struct Common {
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; falls back to output.dir, then $UNLEARN_AUDIT_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
    /// neggrad, scrub or sftc
    #[arg(long)]
    method: Option<String>,
    /// Unlearning epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Unlearning learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Any other configuration key, as KEY=VALUE. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// Failure before any work started versus failure while running.
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome = Result<(), Failure>;

impl Common {
    fn config(&self) -> Result<ExperimentConfig, Failure> {
        let mut map = match &self.config {
            Some(path) => read_config_map(path).map_err(|e| Failure::Usage(e.to_string()))?,
            None => BTreeMap::new(),
        };
        for item in &self.set {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{item}`")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let flags = [
            ("seed", self.seed.map(|v| v.to_string())),
            (
                "output.dir",
                self.out.as_ref().map(|p| p.display().to_string()),
            ),
            ("unlearn.method", self.method.clone()),
            ("unlearn.epochs", self.epochs.map(|v| v.to_string())),
            ("unlearn.lr", self.lr.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                map.insert(key.to_string(), v);
            }
        }
        if !map.contains_key("output.dir") {
            if let Ok(root) = std::env::var(OUT_ENV) {
                map.insert("output.dir".into(), root);
            }
        }
        ExperimentConfig::from_map(&map).map_err(|e| Failure::Usage(e.to_string()))
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

fn tagged<T>(phase: &'static str, r: Result<T, Error>) -> Result<T, Error> {
    r.map_err(|e| match e {
        Error::Phase { .. } => e,
        other => Error::Phase {
            phase,
            source: Box::new(other),
        },
    })
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn to_value<T: serde::Serialize>(v: &T) -> Result<serde_json::Value, Error> {
    serde_json::to_value(v).map_err(|e| Error::Config(e.to_string()))
}

fn summarize(report: &ExperimentReport) {
    let (m, a) = report.terminal();
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    println!(
        "epoch {}  forget_acc {}  retain_acc {}  test_acc {}  mia_forget {:.4}  mia_retain {:.4}  adversary {:.4}",
        m.epoch,
        opt(m.forget_acc),
        opt(m.retain_acc),
        opt(m.test_acc),
        a.mia_forget_acc,
        a.mia_retain_acc,
        a.adversary_success
    );
}

fn gen_data(common: &Common, format: &str) -> Outcome {
    let config = common.config()?;
    let format: TabularFormat = format
        .parse()
        .map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let dataset = tagged("data", load_dataset(&config))?;
    ensure_dir(&config.output_dir)?;
    let name = match format {
        TabularFormat::CsvLabeled => "dataset.csv",
        TabularFormat::BinaryF32 => "dataset.bin",
    };
    let path = config.output_dir.join(name);
    save_tabular(&dataset, &path, format)?;
    println!(
        "{} rows, {} features, {} classes -> {}",
        dataset.len(),
        dataset.num_features(),
        dataset.num_classes,
        path.display()
    );
    Ok(())
}

fn split(common: &Common) -> Outcome {
    let config = common.config()?;
    let dataset = tagged("data", load_dataset(&config))?;
    let part = tagged("split", partition(&config, &dataset))?;
    ensure_dir(&config.output_dir)?;
    let path = config.output_dir.join("splits.json");
    write_json(&path, &to_value(&part)?)?;
    let s = &part.splits;
    println!(
        "target_train {}  shadow_pool {}  test {}  retain {}  forget {} -> {}",
        s.target_train.len(),
        s.shadow_pool.len(),
        s.test.len(),
        s.retain.len(),
        s.forget.len(),
        path.display()
    );
    Ok(())
}

fn train(common: &Common) -> Outcome {
    let config = common.config()?;
    let dataset = tagged("data", load_dataset(&config))?;
    let part = tagged("split", partition(&config, &dataset))?;
    let (model, history) = tagged("target", train_target(&config, &dataset, &part))?;
    ensure_dir(&config.output_dir)?;
    let path = config.output_dir.join("target.json");
    write_json(
        &path,
        &json!({ "model": to_value(&model)?, "history": to_value(&history)? }),
    )?;
    if let Some(last) = history.last() {
        println!(
            "train_acc {:.4}  test_acc {} -> {}",
            last.train_acc,
            last.test_acc.map_or("-".into(), |v| format!("{v:.4}")),
            path.display()
        );
    }
    Ok(())
}

fn attack(common: &Common) -> Outcome {
    let config = common.config()?;
    let dataset = tagged("data", load_dataset(&config))?;
    let part = tagged("split", partition(&config, &dataset))?;
    let stage = build_attack(&config, &dataset, &part)?;
    ensure_dir(&config.output_dir)?;
    let path = config.output_dir.join("attack.json");
    write_json(&path, &to_value(&stage)?)?;
    println!(
        "{} shadows, {} attack records -> {}",
        stage.ensemble.shadows.len(),
        stage.attack_data.len(),
        path.display()
    );
    Ok(())
}

fn unlearn(common: &Common) -> Outcome {
    let config = common.config()?;
    let (report, model) = execute(&config)?;
    write_report(&report, &config.output_dir, &config.formats)?;
    write_json(&config.output_dir.join("model.json"), &to_value(&model)?)?;
    summarize(&report);
    Ok(())
}

fn run(common: &Common) -> Outcome {
    let report = run_experiment(&common.config()?)?;
    summarize(&report);
    Ok(())
}

fn sweep(common: &Common, rates: &[f64]) -> Outcome {
    let config = common.config()?;
    let report = sensitivity_sweep(&config, rates)?;
    print!("{}", render_sweep_csv(&report));
    let failed: Vec<String> = report
        .entries
        .iter()
        .filter_map(|e| match &e.outcome {
            SweepOutcome::Failed { message, .. } => {
                Some(format!("lr {}: {message}", e.learning_rate))
            }
            SweepOutcome::Completed { .. } => None,
        })
        .collect();
    if failed.is_empty() {
        return Ok(());
    }
    Err(Failure::Runtime(Error::Config(format!(
        "{} of {} rates failed; {}",
        failed.len(),
        report.entries.len(),
        failed.join("; ")
    ))))
}

fn report(input: Option<&Path>, out: Option<&Path>, formats: &[String]) -> Outcome {
    let formats = formats
        .iter()
        .map(|f| f.parse::<ReportFormat>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let out = match out {
        Some(dir) => dir.to_path_buf(),
        None => std::env::var(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|_| PathBuf::from("out")),
    };
    let input = input.map_or_else(|| out.join(REPORT_FILE), Path::to_path_buf);
    let saved = read_report_json(&input)?;
    write_report(&saved, &out, &formats)?;
    summarize(&saved);
    Ok(())
}

fn dispatch(command: &Command) -> Outcome {
    match command {
        Command::GenData { common, format } => gen_data(common, format),
        Command::Split(c) => split(c),
        Command::Train(c) => train(c),
        Command::Attack(c) => attack(c),
        Command::Unlearn(c) => unlearn(c),
        Command::Run(c) => run(c),
        Command::Sweep { common, rates } => sweep(common, rates),
        Command::Report {
            input,
            out,
            formats,
        } => report(input.as_deref(), out.as_deref(), formats),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            if let Some(phase) = e.phase() {
                eprintln!("failed phase: {phase}");
            }
            ExitCode::from(2)
        }
    }
}
