//! Config-driven experiment runs, learning-rate sweeps and report output.

mod config;
mod experiment;
mod report;
mod svg;
mod sweep;

pub use config::{
    parse_config_text, read_config_map, ArchitecturePreset, DataSource, ExperimentConfig,
    PhaseSeeds, ReportFormat, CONFIG_KEYS,
};
pub use experiment::{
    build_attack, execute, load_dataset, partition, run_experiment, train_target, AttackStage,
    DatasetSummary, ExperimentReport, Partition, PhaseTiming, PreUnlearningSummary, ShadowSummary,
    SplitSizes,
};
pub use report::{
    read_report_json, render_metrics_csv, render_report_json, write_atomic, write_report,
    CURVES_FILE, METRICS_COLUMNS, METRICS_FILE, REPORT_FILE,
};
pub use svg::render_curves;
pub use sweep::{
    check_rates, rate_dir_name, render_sweep_csv, sensitivity_sweep, SweepEntry, SweepOutcome,
    SweepReport,
};
