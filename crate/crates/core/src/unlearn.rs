//! Approximate unlearning: NegGrad, SCRUB and SFTC.
//!
//! Each algorithm is an epoch step over mini-batches. [`run_unlearning`]
//! drives the steps and calls an evaluation hook after every epoch so that
//! accuracies and attack scores can be tracked throughout the process.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{RowSource, SplitBundle};
use crate::error::{Error, Result};
use crate::mia::AttackReport;
use crate::nn::{
    check_source, descend_batch, descend_batches, one_hot, softmax_rows, Direction, EpochMetrics,
    Mlp,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfusionResample {
    PerEpoch,
    Once,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum UnlearnMethod {
    /// Gradient ascent on the forget set's cross-entropy.
    NegGrad { learning_rate: f64 },
    /// Teacher-student: push away from the frozen teacher on the forget set,
    /// stay close to it (and to the labels) on the retain set.
    Scrub {
        learning_rate: f64,
        /// Weight of `KL(teacher || student)` in the retain objective.
        alpha: f64,
        /// Step scale of the forget-set KL ascent.
        gamma: f64,
    },
    /// Fine-tune on retain while training forget rows toward wrong labels.
    Sftc {
        learning_rate: f64,
        confusion_resample: ConfusionResample,
    },
}

impl UnlearnMethod {
    pub fn scrub(learning_rate: f64) -> Self {
        UnlearnMethod::Scrub {
            learning_rate,
            alpha: 0.5,
            gamma: 1.0,
        }
    }

    pub fn sftc(learning_rate: f64) -> Self {
        UnlearnMethod::Sftc {
            learning_rate,
            confusion_resample: ConfusionResample::PerEpoch,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            UnlearnMethod::NegGrad { .. } => "neggrad",
            UnlearnMethod::Scrub { .. } => "scrub",
            UnlearnMethod::Sftc { .. } => "sftc",
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match *self {
            UnlearnMethod::NegGrad { learning_rate }
            | UnlearnMethod::Scrub { learning_rate, .. }
            | UnlearnMethod::Sftc { learning_rate, .. } => learning_rate,
        }
    }

    pub fn with_learning_rate(&self, lr: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            UnlearnMethod::NegGrad { learning_rate }
            | UnlearnMethod::Scrub { learning_rate, .. }
            | UnlearnMethod::Sftc { learning_rate, .. } => *learning_rate = lr,
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.learning_rate();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!(
                "unlearning learning rate must be positive, got {lr}"
            )));
        }
        if let UnlearnMethod::Scrub { alpha, gamma, .. } = *self {
            if !(alpha >= 0.0 && gamma >= 0.0 && alpha.is_finite() && gamma.is_finite()) {
                return Err(Error::Config(format!(
                    "SCRUB weights must be non-negative, got alpha={alpha} gamma={gamma}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub metrics: EpochMetrics,
    pub attack: AttackReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnlearnTrace {
    pub method: UnlearnMethod,
    pub epochs_run: usize,
    pub entries: Vec<TraceEntry>,
}

fn check_batch(batch_size: usize) -> Result<()> {
    if batch_size == 0 {
        Err(Error::Config("batch size must be at least 1".into()))
    } else {
        Ok(())
    }
}

fn tag_nonfinite(method: &str, e: Error) -> Error {
    match e {
        Error::NonFinite(msg) => Error::NonFinite(format!("{method}: {msg}")),
        other => other,
    }
}

/// Plain retain-set fine-tuning: one shuffled SGD pass.
pub fn finetune_epoch<S: RowSource + ?Sized>(
    model: &mut Mlp,
    data: &S,
    retain: &[usize],
    learning_rate: f64,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    crate::nn::sgd_epoch(model, data, retain, learning_rate, batch_size, rng).map(|_| ())
}

/// One pass of gradient ascent over shuffled forget-set mini-batches.
///
/// Only rows in `forget` are read. Ascent can diverge at large learning
/// rates; that surfaces as [`Error::NonFinite`].
pub fn neggrad_epoch<S: RowSource + ?Sized>(
    model: &mut Mlp,
    data: &S,
    forget: &[usize],
    learning_rate: f64,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    check_batch(batch_size)?;
    if forget.is_empty() {
        return Err(Error::Empty("NegGrad needs a non-empty forget set".into()));
    }
    let mut order = forget.to_vec();
    order.shuffle(rng);
    for batch in order.chunks(batch_size) {
        let (x, y) = data.gather(batch)?;
        let (loss, grads) = model.loss_and_grad(x.view(), &y, None)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("neggrad: forget loss is {loss}")));
        }
        model
            .apply_step(&grads, learning_rate, Direction::Ascend)
            .map_err(|e| tag_nonfinite("neggrad", e))?;
    }
    Ok(())
}

/// One SCRUB epoch: a max-phase over forget batches ascending on
/// `gamma * mean KL(teacher || student)`, then a min-phase over retain
/// batches descending on `CE + alpha * KL(teacher || student)`.
///
/// The retain order is drawn first so that `alpha = gamma = 0` reproduces
/// [`finetune_epoch`] exactly.
#[allow(clippy::too_many_arguments)]
pub fn scrub_epoch<S: RowSource + ?Sized>(
    student: &mut Mlp,
    teacher: &Mlp,
    data: &S,
    retain: &[usize],
    forget: &[usize],
    learning_rate: f64,
    alpha: f64,
    gamma: f64,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    check_batch(batch_size)?;
    if student.layer_dims() != teacher.layer_dims() {
        return Err(Error::Shape(format!(
            "student {:?} and teacher {:?} differ in shape",
            student.layer_dims(),
            teacher.layer_dims()
        )));
    }
    if retain.is_empty() || forget.is_empty() {
        return Err(Error::Empty(
            "SCRUB needs non-empty retain and forget sets".into(),
        ));
    }
    let mut retain_order = retain.to_vec();
    retain_order.shuffle(rng);

    if gamma > 0.0 {
        let mut forget_order = forget.to_vec();
        forget_order.shuffle(rng);
        for batch in forget_order.chunks(batch_size) {
            let (x, _) = data.gather(batch)?;
            let teacher_p = teacher.forward(x.view())?;
            let cache = student.forward_cached(x.view())?;
            // d/dz mean KL(t || softmax(z)) = (softmax(z) - t) / n
            let mut dlogits = softmax_rows(cache.logits.view());
            dlogits -= &teacher_p;
            dlogits /= batch.len() as f64;
            let grads = student.backward(&cache, &dlogits);
            student
                .apply_step(&grads, learning_rate * gamma, Direction::Ascend)
                .map_err(|e| tag_nonfinite("scrub max-phase", e))?;
        }
    }

    if alpha == 0.0 {
        descend_batches(student, data, &retain_order, learning_rate, batch_size)
            .map_err(|e| tag_nonfinite("scrub min-phase", e))?;
        return Ok(());
    }
    for batch in retain_order.chunks(batch_size) {
        let (x, y) = data.gather(batch)?;
        let teacher_p = teacher.forward(x.view())?;
        let cache = student.forward_cached(x.view())?;
        let p = softmax_rows(cache.logits.view());
        let labels = one_hot(&y, student.num_classes());
        // (p - y) + alpha * (p - t)
        let dlogits: Array2<f64> =
            ((&p - &labels) + (&p - &teacher_p) * alpha) / batch.len() as f64;
        if dlogits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scrub min-phase: gradient".into()));
        }
        let grads = student.backward(&cache, &dlogits);
        student
            .apply_step(&grads, learning_rate, Direction::Descend)
            .map_err(|e| tag_nonfinite("scrub min-phase", e))?;
    }
    Ok(())
}

/// A uniformly drawn wrong class for every entry of `labels`.
pub fn draw_confusion_labels(
    labels: &[usize],
    num_classes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if num_classes < 2 {
        return Err(Error::Config(format!(
            "confusion labels need at least 2 classes, got {num_classes}"
        )));
    }
    labels
        .iter()
        .map(|&y| {
            if y >= num_classes {
                return Err(Error::Label(format!(
                    "label {y} out of range for {num_classes} classes"
                )));
            }
            let r = rng.random_range(0..num_classes - 1);
            Ok(if r < y { r } else { r + 1 })
        })
        .collect()
}

/// Positions at which forget batches are slotted between retain batches so
/// that both kinds are spread evenly over the pass.
fn interleave(n_retain: usize, n_forget: usize) -> Vec<bool> {
    let total = n_retain + n_forget;
    let mut placed = 0;
    (0..total)
        .map(|t| {
            let is_forget = placed < n_forget && (placed + 1) * total <= (t + 1) * n_forget;
            if is_forget {
                placed += 1;
            }
            is_forget
        })
        .collect()
}

/// One SFTC pass: retain batches descend on the true labels, forget batches
/// descend on confusion labels, interleaved.
///
/// `confusion` holds one fixed wrong label per `forget` entry; when `None`,
/// fresh labels are drawn for this epoch. The retain order is drawn first so
/// that an empty forget set reproduces [`finetune_epoch`] exactly.
#[allow(clippy::too_many_arguments)]
pub fn sftc_epoch<S: RowSource + ?Sized>(
    model: &mut Mlp,
    data: &S,
    retain: &[usize],
    forget: &[usize],
    learning_rate: f64,
    confusion: Option<&[usize]>,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    check_batch(batch_size)?;
    if retain.is_empty() {
        return Err(Error::Empty("SFTC needs a non-empty retain set".into()));
    }
    if data.num_classes() < 2 && !forget.is_empty() {
        return Err(Error::Config(
            "SFTC needs at least 2 classes to confuse the forget set".into(),
        ));
    }
    let mut retain_order = retain.to_vec();
    retain_order.shuffle(rng);

    let confusion: Vec<usize> = match confusion {
        Some(c) if c.len() == forget.len() => c.to_vec(),
        Some(c) => {
            return Err(Error::Shape(format!(
                "{} confusion labels for {} forget rows",
                c.len(),
                forget.len()
            )))
        }
        None if forget.is_empty() => Vec::new(),
        None => {
            let (_, y) = data.gather(forget)?;
            draw_confusion_labels(&y, data.num_classes(), rng)?
        }
    };
    let mut forget_pos: Vec<usize> = (0..forget.len()).collect();
    forget_pos.shuffle(rng);

    let retain_batches: Vec<&[usize]> = retain_order.chunks(batch_size).collect();
    let forget_batches: Vec<&[usize]> = forget_pos.chunks(batch_size).collect();
    let (mut r, mut f) = (0, 0);
    for is_forget in interleave(retain_batches.len(), forget_batches.len()) {
        if is_forget {
            let positions = forget_batches[f];
            f += 1;
            let rows: Vec<usize> = positions.iter().map(|&p| forget[p]).collect();
            let labels: Vec<usize> = positions.iter().map(|&p| confusion[p]).collect();
            descend_batch(model, data, &rows, Some(&labels), learning_rate)
                .map_err(|e| tag_nonfinite("sftc forget batch", e))?;
        } else {
            descend_batch(model, data, retain_batches[r], None, learning_rate)
                .map_err(|e| tag_nonfinite("sftc retain batch", e))?;
            r += 1;
        }
    }
    Ok(())
}

/// Random stream for epoch `epoch` (1-based) of a run; stream 0 is setup.
pub fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    rng
}

/// Runs `epochs` steps of `method`, calling `hook(model, epoch)` after each.
///
/// SCRUB's teacher is a frozen copy of `model` taken before the first epoch.
#[allow(clippy::too_many_arguments)]
pub fn run_unlearning<S, H>(
    mut model: Mlp,
    data: &S,
    splits: &SplitBundle,
    method: &UnlearnMethod,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    mut hook: H,
) -> Result<(Mlp, UnlearnTrace)>
where
    S: RowSource + ?Sized,
    H: FnMut(&Mlp, usize) -> Result<(EpochMetrics, AttackReport)>,
{
    method.validate()?;
    check_batch(batch_size)?;
    check_source(&model, data)?;
    let teacher = matches!(method, UnlearnMethod::Scrub { .. }).then(|| model.clone());
    let fixed_confusion = match method {
        UnlearnMethod::Sftc {
            confusion_resample: ConfusionResample::Once,
            ..
        } if !splits.forget.is_empty() => {
            let (_, y) = data.gather(&splits.forget)?;
            Some(draw_confusion_labels(
                &y,
                data.num_classes(),
                &mut epoch_rng(seed, 0),
            )?)
        }
        _ => None,
    };

    let mut entries = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let mut rng = epoch_rng(seed, epoch as u64);
        let step = match *method {
            UnlearnMethod::NegGrad { learning_rate } => neggrad_epoch(
                &mut model,
                data,
                &splits.forget,
                learning_rate,
                batch_size,
                &mut rng,
            ),
            UnlearnMethod::Scrub {
                learning_rate,
                alpha,
                gamma,
            } => scrub_epoch(
                &mut model,
                teacher.as_ref().expect("teacher snapshot"),
                data,
                &splits.retain,
                &splits.forget,
                learning_rate,
                alpha,
                gamma,
                batch_size,
                &mut rng,
            ),
            UnlearnMethod::Sftc { learning_rate, .. } => sftc_epoch(
                &mut model,
                data,
                &splits.retain,
                &splits.forget,
                learning_rate,
                fixed_confusion.as_deref(),
                batch_size,
                &mut rng,
            ),
        };
        step.map_err(|e| match e {
            Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}: {msg}")),
            other => other,
        })?;
        let (mut metrics, attack) = hook(&model, epoch)?;
        metrics.epoch = epoch;
        entries.push(TraceEntry { metrics, attack });
    }
    Ok((
        model,
        UnlearnTrace {
            method: method.clone(),
            epochs_run: epochs,
            entries,
        },
    ))
}
