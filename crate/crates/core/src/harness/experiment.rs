use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig};
use super::report::write_report;
use crate::data::{generate_synthetic, load_tabular, make_splits, Dataset, SplitBundle, SplitPlan};
use crate::error::{Error, PhaseExt, Result};
use crate::mia::{
    audit, build_attack_dataset, train_attack_model, train_shadows, AttackDataset, AttackModel,
    AttackReport, ShadowEnsemble,
};
use crate::nn::{epoch_metrics, mean_loss_on, train, EpochMetrics, EvalSets, Mlp, TrainConfig};
use crate::unlearn::{run_unlearning, UnlearnTrace};

/// Splits plus the validation rows carved out of the test split.
///
/// `splits.test` keeps every held-out row and supplies MIA non-members;
/// `validation` and `test_eval` partition it for accuracy reporting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub splits: SplitBundle,
    pub validation: Vec<usize>,
    pub test_eval: Vec<usize>,
}

impl Partition {
    fn eval_sets(&self) -> EvalSets<'_> {
        EvalSets {
            validation: (!self.validation.is_empty()).then_some(&self.validation[..]),
            test: Some(&self.test_eval),
            forget: Some(&self.splits.forget),
            retain: Some(&self.splits.retain),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub rows: usize,
    pub features: usize,
    pub classes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub target_train: usize,
    pub shadow_pool: usize,
    pub test: usize,
    pub validation: usize,
    pub retain: usize,
    pub forget: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowSummary {
    pub members: usize,
    pub nonmembers: usize,
    pub train_acc: f64,
    pub holdout_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreUnlearningSummary {
    /// Epoch-0 metrics of the trained target, same definitions as the trace.
    pub metrics: EpochMetrics,
    pub baseline_attack: AttackReport,
    pub target_history: Vec<EpochMetrics>,
    pub shadows: Vec<ShadowSummary>,
    pub attack_records: usize,
    /// Attack model accuracy on its own training records.
    pub attack_train_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub dataset: DatasetSummary,
    pub split_sizes: SplitSizes,
    pub pre_unlearning: PreUnlearningSummary,
    pub trace: UnlearnTrace,
    pub timings: Vec<PhaseTiming>,
}

impl ExperimentReport {
    /// Equality ignoring wall-clock timings and the output location.
    pub fn same_results(&self, other: &ExperimentReport) -> bool {
        let strip = |r: &ExperimentReport| {
            let mut r = r.clone();
            r.timings.clear();
            r.config.output_dir = Default::default();
            r
        };
        strip(self) == strip(other)
    }

    /// Last traced epoch, or the pre-unlearning state when nothing ran.
    pub fn terminal(&self) -> (&EpochMetrics, &AttackReport) {
        match self.trace.entries.last() {
            Some(e) => (&e.metrics, &e.attack),
            None => (
                &self.pre_unlearning.metrics,
                &self.pre_unlearning.baseline_attack,
            ),
        }
    }
}

/// Shadow ensemble and the attack trained on it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackStage {
    pub ensemble: ShadowEnsemble,
    pub attack_data: AttackDataset,
    pub attack: AttackModel,
}

pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    match &config.dataset {
        DataSource::File { path, format } => load_tabular(path, *format),
        DataSource::Synthetic(spec) => generate_synthetic(spec),
    }
}

pub fn partition(config: &ExperimentConfig, dataset: &Dataset) -> Result<Partition> {
    let plan = SplitPlan {
        seed: config.phase_seeds().split,
        ..config.split.clone()
    };
    let splits = make_splits(dataset, &plan)?;
    let vf = config.target.validation_fraction;
    let held = (vf * splits.test.len() as f64).floor() as usize;
    if vf > 0.0 && (held == 0 || held == splits.test.len()) {
        return Err(Error::Split(format!(
            "validation fraction {vf} of {} test rows leaves an empty part",
            splits.test.len()
        )));
    }
    Ok(Partition {
        validation: splits.test[..held].to_vec(),
        test_eval: splits.test[held..].to_vec(),
        splits,
    })
}

fn layer_dims(config: &ExperimentConfig, dataset: &Dataset) -> Vec<usize> {
    std::iter::once(dataset.num_features())
        .chain(config.hidden.iter().copied())
        .chain(std::iter::once(dataset.num_classes))
        .collect()
}

fn target_train_config(config: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        seed: config.phase_seeds().target,
        validation_fraction: 0.0,
        ..config.target.clone()
    }
}

/// Trains the target on `target_train` and records per-epoch metrics.
pub fn train_target(
    config: &ExperimentConfig,
    dataset: &Dataset,
    part: &Partition,
) -> Result<(Mlp, Vec<EpochMetrics>)> {
    let cfg = target_train_config(config);
    let init = Mlp::new(&layer_dims(config, dataset), cfg.seed)?;
    train(
        init,
        dataset,
        &part.splits.target_train,
        &cfg,
        &part.eval_sets(),
        |_, _| {},
    )
}

/// Trains the shadow ensemble on the shadow pool, then the attack model.
pub fn build_attack(
    config: &ExperimentConfig,
    dataset: &Dataset,
    part: &Partition,
) -> Result<AttackStage> {
    let seeds = config.phase_seeds();
    let ensemble = train_shadows(
        &part.splits.shadow_pool,
        dataset,
        &config.hidden,
        &target_train_config(config),
        config.shadow_count,
        seeds.shadows,
    )
    .in_phase("shadows")?;
    let attack_data = build_attack_dataset(&ensemble, dataset).in_phase("attack")?;
    let attack_cfg = TrainConfig {
        seed: seeds.attack,
        validation_fraction: 0.0,
        ..config.attack.clone()
    };
    let attack = train_attack_model(&attack_data, &attack_cfg).in_phase("attack")?;
    Ok(AttackStage {
        ensemble,
        attack_data,
        attack,
    })
}

fn epoch_state(
    model: &Mlp,
    dataset: &Dataset,
    part: &Partition,
    attack: &AttackModel,
    epoch: usize,
    eval_seed: u64,
) -> Result<(EpochMetrics, AttackReport)> {
    let loss = mean_loss_on(model, dataset, &part.splits.retain)?;
    let metrics = epoch_metrics(
        model,
        dataset,
        epoch,
        &part.splits.target_train,
        &part.eval_sets(),
        loss,
    )?;
    let report = audit(attack, model, &part.splits, dataset, eval_seed)?;
    Ok((metrics, report))
}

struct Clock {
    timings: Vec<PhaseTiming>,
    started: Instant,
}

impl Clock {
    fn new() -> Self {
        Clock {
            timings: Vec::new(),
            started: Instant::now(),
        }
    }

    fn lap(&mut self, phase: &str) {
        let now = Instant::now();
        self.timings.push(PhaseTiming {
            phase: phase.to_string(),
            seconds: (now - self.started).as_secs_f64(),
        });
        self.started = now;
    }
}

/// Runs every phase and returns the report without writing anything.
///
/// Also returns the unlearned model.
pub fn execute(config: &ExperimentConfig) -> Result<(ExperimentReport, Mlp)> {
    config.validate().in_phase("config")?;
    let seeds = config.phase_seeds();
    let mut clock = Clock::new();

    let dataset = load_dataset(config).in_phase("data")?;
    clock.lap("data");
    let part = partition(config, &dataset).in_phase("split")?;
    clock.lap("split");
    let (target, history) = train_target(config, &dataset, &part).in_phase("target")?;
    clock.lap("target");
    let stage = build_attack(config, &dataset, &part)?;
    clock.lap("shadows+attack");

    let attack_train_acc = {
        let as_data = stage.attack_data.to_dataset()?;
        let rows: Vec<usize> = (0..as_data.len()).collect();
        crate::nn::accuracy_on(&stage.attack.model, &as_data, &rows).in_phase("attack")?
    };
    let (metrics, baseline_attack) =
        epoch_state(&target, &dataset, &part, &stage.attack, 0, seeds.evaluation)
            .in_phase("baseline")?;
    clock.lap("baseline");

    let (unlearned, trace) = run_unlearning(
        target,
        &dataset,
        &part.splits,
        &config.method,
        config.unlearn_epochs,
        config.unlearn_batch_size,
        seeds.unlearn,
        |model, epoch| {
            epoch_state(
                model,
                &dataset,
                &part,
                &stage.attack,
                epoch,
                seeds.evaluation,
            )
        },
    )
    .in_phase("unlearn")?;
    clock.lap("unlearn");

    let report = ExperimentReport {
        config: config.clone(),
        seed: config.seed,
        dataset: DatasetSummary {
            name: dataset.name.clone(),
            rows: dataset.len(),
            features: dataset.num_features(),
            classes: dataset.num_classes,
        },
        split_sizes: SplitSizes {
            target_train: part.splits.target_train.len(),
            shadow_pool: part.splits.shadow_pool.len(),
            test: part.splits.test.len(),
            validation: part.validation.len(),
            retain: part.splits.retain.len(),
            forget: part.splits.forget.len(),
        },
        pre_unlearning: PreUnlearningSummary {
            metrics,
            baseline_attack,
            target_history: history,
            shadows: stage
                .ensemble
                .shadows
                .iter()
                .map(|s| ShadowSummary {
                    members: s.members.len(),
                    nonmembers: s.nonmembers.len(),
                    train_acc: s.train_acc,
                    holdout_acc: s.holdout_acc,
                })
                .collect(),
            attack_records: stage.attack_data.len(),
            attack_train_acc,
        },
        trace,
        timings: clock.timings,
    };
    Ok((report, unlearned))
}

/// Runs the full pipeline and persists the report to `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let (report, _) = execute(config)?;
    write_report(&report, &config.output_dir, &config.formats).in_phase("report")?;
    Ok(report)
}
