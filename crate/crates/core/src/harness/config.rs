//! Experiment configuration and its flat `key=value` file form.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{ForgetMode, SplitPlan, SyntheticSpec, TabularFormat};
use crate::error::{Error, Result};
use crate::mia::default_attack_config;
use crate::nn::TrainConfig;
use crate::unlearn::{ConfusionResample, UnlearnMethod};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    File {
        path: PathBuf,
        format: TabularFormat,
    },
    Synthetic(SyntheticSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

/// Target architectures and training schedules per dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArchitecturePreset {
    Cifar10,
    Mufac,
    Purchase100,
    Texas100,
}

impl ArchitecturePreset {
    /// `(hidden widths, epochs, learning rate)`.
    pub fn settings(self) -> (Vec<usize>, usize, f64) {
        match self {
            ArchitecturePreset::Cifar10 => (vec![512, 256, 128], 30, 0.001),
            ArchitecturePreset::Mufac => (vec![512, 256, 128], 60, 0.0007),
            ArchitecturePreset::Purchase100 => (vec![128], 100, 0.01),
            ArchitecturePreset::Texas100 => (vec![128], 100, 0.01),
        }
    }
}

impl FromStr for ArchitecturePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cifar10" | "cifar-10" => Ok(ArchitecturePreset::Cifar10),
            "mufac" => Ok(ArchitecturePreset::Mufac),
            "purchase" | "purchase100" | "purchase-100" => Ok(ArchitecturePreset::Purchase100),
            "texas" | "texas100" | "texas-100" => Ok(ArchitecturePreset::Texas100),
            other => Err(Error::Config(format!(
                "unknown architecture preset `{other}`"
            ))),
        }
    }
}

/// Seeds handed to each phase, derived from the master seed by fixed offsets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSeeds {
    pub split: u64,
    pub target: u64,
    pub shadows: u64,
    pub attack: u64,
    pub unlearn: u64,
    pub evaluation: u64,
}

impl PhaseSeeds {
    pub const SPLIT: u64 = 1;
    pub const TARGET: u64 = 2;
    pub const SHADOWS: u64 = 3;
    pub const ATTACK: u64 = 10;
    pub const UNLEARN: u64 = 11;
    pub const EVALUATION: u64 = 12;

    pub fn from_master(master: u64) -> Self {
        PhaseSeeds {
            split: master.wrapping_add(Self::SPLIT),
            target: master.wrapping_add(Self::TARGET),
            shadows: master.wrapping_add(Self::SHADOWS),
            attack: master.wrapping_add(Self::ATTACK),
            unlearn: master.wrapping_add(Self::UNLEARN),
            evaluation: master.wrapping_add(Self::EVALUATION),
        }
    }
}

/// Everything one end-to-end run needs.
///
/// The `seed` fields inside `split`, `target` and `attack` are not read:
/// phase seeds come from [`ExperimentConfig::phase_seeds`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DataSource,
    pub split: SplitPlan,
    pub hidden: Vec<usize>,
    pub target: TrainConfig,
    pub shadow_count: usize,
    pub attack: TrainConfig,
    /// Replaces the derived attack seed when set.
    pub attack_seed: Option<u64>,
    pub method: UnlearnMethod,
    pub unlearn_epochs: usize,
    pub unlearn_batch_size: usize,
    pub output_dir: PathBuf,
    pub formats: Vec<ReportFormat>,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Defaults around a synthetic dataset: one hidden layer of 128 units,
    /// 100 epochs at 0.01, five shadows, NegGrad for 50 epochs.
    pub fn with_synthetic(spec: SyntheticSpec) -> Self {
        let (hidden, epochs, lr) = ArchitecturePreset::Purchase100.settings();
        ExperimentConfig {
            dataset: DataSource::Synthetic(spec),
            split: SplitPlan::default(),
            hidden,
            target: TrainConfig {
                epochs,
                learning_rate: lr,
                batch_size: 64,
                seed: 0,
                validation_fraction: 0.1,
            },
            shadow_count: 5,
            attack: default_attack_config(0),
            attack_seed: None,
            method: UnlearnMethod::NegGrad { learning_rate: lr },
            unlearn_epochs: 50,
            unlearn_batch_size: 64,
            output_dir: PathBuf::from("out"),
            formats: vec![ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg],
            seed: 0,
        }
    }

    pub fn phase_seeds(&self) -> PhaseSeeds {
        let mut seeds = PhaseSeeds::from_master(self.seed);
        if let Some(s) = self.attack_seed {
            seeds.attack = s;
        }
        seeds
    }

    pub fn validate(&self) -> Result<()> {
        if let DataSource::Synthetic(spec) = &self.dataset {
            spec.validate()?;
        }
        self.split.validate()?;
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        self.target.validate()?;
        self.attack.validate()?;
        self.method.validate()?;
        if self.shadow_count == 0 {
            return Err(Error::Config("shadow.count must be at least 1".into()));
        }
        if self.unlearn_batch_size == 0 {
            return Err(Error::Config(
                "unlearn.batch_size must be at least 1".into(),
            ));
        }
        if self.formats.is_empty() {
            return Err(Error::Config("output.formats is empty".into()));
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_map(&read_config_map(path)?)
    }

    /// Builds a config from flat keys. Unknown keys are errors.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        if let Some(bad) = map.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown config key `{bad}`")));
        }
        let get = |k: &str| map.get(k).map(String::as_str);
        let seed: u64 = parse_or(map, "seed", 0)?;

        let has_synthetic = map.keys().any(|k| k.starts_with("synthetic."));
        let dataset = match (get("dataset.path"), has_synthetic) {
            (Some(_), true) => {
                return Err(Error::Config(
                    "give either dataset.path or synthetic.* keys, not both".into(),
                ))
            }
            (Some(path), false) => {
                let format = match get("dataset.format") {
                    Some(f) => f.parse()?,
                    None if path.ends_with(".csv") => TabularFormat::CsvLabeled,
                    None => TabularFormat::BinaryF32,
                };
                DataSource::File {
                    path: PathBuf::from(path),
                    format,
                }
            }
            (None, true) => DataSource::Synthetic(SyntheticSpec {
                n_samples: require(map, "synthetic.n_samples")?,
                n_features: require(map, "synthetic.n_features")?,
                n_classes: require(map, "synthetic.n_classes")?,
                class_separation: parse_or(map, "synthetic.separation", 3.0)?,
                seed: parse_or(map, "synthetic.seed", seed)?,
            }),
            (None, false) => {
                return Err(Error::Config(
                    "no dataset: set dataset.path or synthetic.n_samples/n_features/n_classes"
                        .into(),
                ))
            }
        };
        if get("dataset.format").is_some() && get("dataset.path").is_none() {
            return Err(Error::Config(
                "dataset.format given without dataset.path".into(),
            ));
        }

        let defaults = SplitPlan::default();
        let split = SplitPlan {
            train_fraction: parse_or(map, "split.train_fraction", defaults.train_fraction)?,
            target_shadow_fraction: parse_or(
                map,
                "split.target_shadow_fraction",
                defaults.target_shadow_fraction,
            )?,
            retain_fraction: parse_or(map, "split.retain_fraction", defaults.retain_fraction)?,
            forget_mode: match get("split.forget_mode") {
                None | Some("random_rows") => ForgetMode::RandomRows,
                Some(other) => match other.strip_prefix("class:") {
                    Some(c) => ForgetMode::SingleClass(parse_value("split.forget_mode", c)?),
                    None => {
                        return Err(Error::Config(format!(
                            "split.forget_mode must be random_rows or class:<id>, got `{other}`"
                        )))
                    }
                },
            },
            seed: 0,
        };

        let preset = get("target.preset")
            .map(ArchitecturePreset::from_str)
            .transpose()?
            .unwrap_or(ArchitecturePreset::Purchase100);
        let (preset_hidden, preset_epochs, preset_lr) = preset.settings();
        let hidden = match get("target.hidden") {
            Some(h) => parse_list("target.hidden", h)?,
            None => preset_hidden,
        };
        let target = TrainConfig {
            epochs: parse_or(map, "target.epochs", preset_epochs)?,
            learning_rate: parse_or(map, "target.lr", preset_lr)?,
            batch_size: parse_or(map, "target.batch_size", 64)?,
            seed: 0,
            validation_fraction: parse_or(map, "target.validation_fraction", 0.1)?,
        };

        let attack_defaults = default_attack_config(0);
        let attack = TrainConfig {
            epochs: parse_or(map, "attack.epochs", attack_defaults.epochs)?,
            learning_rate: parse_or(map, "attack.lr", attack_defaults.learning_rate)?,
            batch_size: parse_or(map, "attack.batch_size", attack_defaults.batch_size)?,
            seed: 0,
            validation_fraction: 0.0,
        };
        let attack_seed = get("attack.seed")
            .map(|v| parse_value("attack.seed", v))
            .transpose()?;

        let unlearn_lr: f64 = parse_or(map, "unlearn.lr", target.learning_rate)?;
        let method = match get("unlearn.method").unwrap_or("neggrad") {
            "neggrad" => UnlearnMethod::NegGrad {
                learning_rate: unlearn_lr,
            },
            "scrub" => UnlearnMethod::Scrub {
                learning_rate: unlearn_lr,
                alpha: parse_or(map, "scrub.alpha", 0.5)?,
                gamma: parse_or(map, "scrub.gamma", 1.0)?,
            },
            "sftc" => UnlearnMethod::Sftc {
                learning_rate: unlearn_lr,
                confusion_resample: match get("sftc.resample").unwrap_or("per_epoch") {
                    "per_epoch" => ConfusionResample::PerEpoch,
                    "once" => ConfusionResample::Once,
                    other => {
                        return Err(Error::Config(format!(
                            "sftc.resample must be per_epoch or once, got `{other}`"
                        )))
                    }
                },
            },
            other => {
                return Err(Error::Config(format!(
                    "unlearn.method must be neggrad, scrub or sftc, got `{other}`"
                )))
            }
        };

        let formats = match get("output.formats") {
            Some(list) => list
                .split(',')
                .map(ReportFormat::from_str)
                .collect::<Result<Vec<_>>>()?,
            None => vec![ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg],
        };

        let config = ExperimentConfig {
            dataset,
            split,
            hidden,
            target: target.clone(),
            shadow_count: parse_or(map, "shadow.count", 5)?,
            attack,
            attack_seed,
            method,
            unlearn_epochs: parse_or(map, "unlearn.epochs", 50)?,
            unlearn_batch_size: parse_or(map, "unlearn.batch_size", target.batch_size)?,
            output_dir: PathBuf::from(get("output.dir").unwrap_or("out")),
            formats,
            seed,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Every key accepted in a config file or as an override.
pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "dataset.path",
    "dataset.format",
    "synthetic.n_samples",
    "synthetic.n_features",
    "synthetic.n_classes",
    "synthetic.separation",
    "synthetic.seed",
    "split.train_fraction",
    "split.target_shadow_fraction",
    "split.retain_fraction",
    "split.forget_mode",
    "target.preset",
    "target.hidden",
    "target.epochs",
    "target.lr",
    "target.batch_size",
    "target.validation_fraction",
    "shadow.count",
    "attack.epochs",
    "attack.lr",
    "attack.batch_size",
    "attack.seed",
    "unlearn.method",
    "unlearn.epochs",
    "unlearn.lr",
    "unlearn.batch_size",
    "scrub.alpha",
    "scrub.gamma",
    "sftc.resample",
    "output.dir",
    "output.formats",
];

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// a repeated key is an error.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("expected key=value, got `{line}`"),
        })?;
        let key = key.trim().to_string();
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("duplicate key `{key}`"),
            });
        }
    }
    Ok(map)
}

pub fn read_config_map(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_text(&text)
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{raw}` is not a valid value for {key}")))
}

fn parse_or<T: FromStr>(map: &BTreeMap<String, String>, key: &str, default: T) -> Result<T> {
    map.get(key).map_or(Ok(default), |v| parse_value(key, v))
}

fn require<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    map.get(key)
        .ok_or_else(|| Error::Config(format!("missing required key {key}")))
        .and_then(|v| parse_value(key, v))
}

fn parse_list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>> {
    raw.split(',').map(|v| parse_value(key, v)).collect()
}
