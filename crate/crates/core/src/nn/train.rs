use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Direction, Mlp};
use crate::data::RowSource;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Share of the training rows held out as a validation set.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 0.01,
            batch_size: 64,
            seed: 0,
            validation_fraction: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation fraction must lie in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// Accuracies and loss recorded after one epoch. Sets that were not supplied
/// are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub forget_acc: Option<f64>,
    pub retain_acc: Option<f64>,
    pub mean_loss: f64,
}

/// Optional row sets evaluated after every epoch.
#[derive(Clone, Copy, Debug, Default)]
pub struct EvalSets<'a> {
    pub validation: Option<&'a [usize]>,
    pub test: Option<&'a [usize]>,
    pub forget: Option<&'a [usize]>,
    pub retain: Option<&'a [usize]>,
}

pub fn accuracy_on<S: RowSource + ?Sized>(model: &Mlp, data: &S, rows: &[usize]) -> Result<f64> {
    let (x, y) = data.gather(rows)?;
    model.accuracy(x.view(), &y)
}

pub fn mean_loss_on<S: RowSource + ?Sized>(model: &Mlp, data: &S, rows: &[usize]) -> Result<f64> {
    let (x, y) = data.gather(rows)?;
    Ok(model.loss_and_grad(x.view(), &y, None)?.0)
}

/// One descent step on the cross-entropy of `rows`, against `labels` when
/// given instead of the stored labels. Returns the batch loss.
pub(crate) fn descend_batch<S: RowSource + ?Sized>(
    model: &mut Mlp,
    data: &S,
    rows: &[usize],
    labels: Option<&[usize]>,
    learning_rate: f64,
) -> Result<f64> {
    let (x, stored) = data.gather(rows)?;
    let y = labels.unwrap_or(&stored);
    let (loss, grads) = model.loss_and_grad(x.view(), y, None)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss is {loss}")));
    }
    model.apply_step(&grads, learning_rate, Direction::Descend)?;
    Ok(loss)
}

/// Runs one descent step per mini-batch of `rows` (in the given order).
/// Returns the sample-weighted mean batch loss.
pub(crate) fn descend_batches<S: RowSource + ?Sized>(
    model: &mut Mlp,
    data: &S,
    rows: &[usize],
    learning_rate: f64,
    batch_size: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for (b, batch) in rows.chunks(batch_size).enumerate() {
        let loss = descend_batch(model, data, batch, None, learning_rate).map_err(|e| match e {
            Error::NonFinite(msg) => Error::NonFinite(format!("batch {b}: {msg}")),
            other => other,
        })?;
        total += loss * batch.len() as f64;
    }
    Ok(total / rows.len().max(1) as f64)
}

/// One shuffled pass of mini-batch SGD over `rows`.
pub fn sgd_epoch<S: RowSource + ?Sized>(
    model: &mut Mlp,
    data: &S,
    rows: &[usize],
    learning_rate: f64,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order = rows.to_vec();
    order.shuffle(rng);
    descend_batches(model, data, &order, learning_rate, batch_size)
}

pub(crate) fn check_source<S: RowSource + ?Sized>(model: &Mlp, data: &S) -> Result<()> {
    if data.num_features() != model.input_dim() {
        return Err(Error::Shape(format!(
            "data has {} features, model expects {}",
            data.num_features(),
            model.input_dim()
        )));
    }
    if data.num_classes() > model.num_classes() {
        return Err(Error::Shape(format!(
            "data has {} classes, model outputs {}",
            data.num_classes(),
            model.num_classes()
        )));
    }
    Ok(())
}

/// Accuracy-style metrics for `model` after `epoch`.
pub fn epoch_metrics<S: RowSource + ?Sized>(
    model: &Mlp,
    data: &S,
    epoch: usize,
    train_rows: &[usize],
    eval: &EvalSets,
    mean_loss: f64,
) -> Result<EpochMetrics> {
    let opt = |rows: Option<&[usize]>| -> Result<Option<f64>> {
        rows.map(|r| accuracy_on(model, data, r)).transpose()
    };
    Ok(EpochMetrics {
        epoch,
        train_acc: accuracy_on(model, data, train_rows)?,
        val_acc: opt(eval.validation)?,
        test_acc: opt(eval.test)?,
        forget_acc: opt(eval.forget)?,
        retain_acc: opt(eval.retain)?,
        mean_loss,
    })
}

/// Mini-batch SGD on cross-entropy, reshuffled every epoch.
///
/// When `config.validation_fraction > 0`, that share of `train_rows` is held
/// out before training and reported as `val_acc`. `hook` runs after every
/// epoch with the current model and its metrics.
pub fn train<S, F>(
    mut model: Mlp,
    data: &S,
    train_rows: &[usize],
    config: &TrainConfig,
    eval: &EvalSets,
    mut hook: F,
) -> Result<(Mlp, Vec<EpochMetrics>)>
where
    S: RowSource + ?Sized,
    F: FnMut(&Mlp, &EpochMetrics),
{
    config.validate()?;
    check_source(&model, data)?;
    if train_rows.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let carved;
    let mut eval = *eval;
    let fit_rows: &[usize] = if config.validation_fraction > 0.0 {
        if eval.validation.is_some() {
            return Err(Error::Config(
                "validation rows given explicitly and via validation_fraction".into(),
            ));
        }
        let mut shuffled = train_rows.to_vec();
        shuffled.shuffle(&mut rng);
        let held = (config.validation_fraction * shuffled.len() as f64).floor() as usize;
        if held == 0 || held == shuffled.len() {
            return Err(Error::Config(format!(
                "validation fraction {} leaves an empty part of {} rows",
                config.validation_fraction,
                shuffled.len()
            )));
        }
        carved = shuffled;
        eval.validation = Some(&carved[..held]);
        &carved[held..]
    } else {
        train_rows
    };

    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mean_loss = sgd_epoch(
            &mut model,
            data,
            fit_rows,
            config.learning_rate,
            config.batch_size,
            &mut rng,
        )
        .map_err(|e| match e {
            Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}: {msg}")),
            other => other,
        })?;
        let metrics = epoch_metrics(&model, data, epoch, fit_rows, &eval, mean_loss)?;
        hook(&model, &metrics);
        history.push(metrics);
    }
    Ok((model, history))
}
