//! Shadow-model membership inference.
//!
//! The adversary trains `k` shadow models that mirror the target's
//! architecture and hyperparameters on disjoint slices of the shadow pool.
//! Querying each shadow on its own members and on held-out rows yields
//! labeled [`AttackFeature`] records; a small binary MLP learns to tell the
//! two apart and is then pointed at the target.
//!
//! The attack is trained once against the pre-unlearning regime. During
//! unlearning only the queried target changes.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, RowSource, SplitBundle};
use crate::error::{Error, Result};
use crate::nn::{accuracy_on, argmax, log_softmax_rows, train, EvalSets, Mlp, TrainConfig};

/// Number of sorted posterior entries kept per sample.
pub const TOP_K: usize = 10;
/// Width of the attack model input: top-k posteriors, loss, correctness, class.
pub const FEATURE_DIM: usize = TOP_K + 3;
/// Hidden width of the attack classifier.
pub const ATTACK_HIDDEN: usize = 64;
/// Losses are clipped here before entering the attack model.
const LOSS_CAP: f64 = 50.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackFeature {
    /// Largest posteriors in descending order, zero-padded past the class count.
    pub sorted_posteriors: [f64; TOP_K],
    pub sample_loss: f64,
    pub correct: bool,
    pub true_class: usize,
}

impl AttackFeature {
    pub fn to_vector(&self, num_classes: usize) -> [f64; FEATURE_DIM] {
        let mut v = [0.0; FEATURE_DIM];
        v[..TOP_K].copy_from_slice(&self.sorted_posteriors);
        v[TOP_K] = self.sample_loss.min(LOSS_CAP);
        v[TOP_K + 1] = if self.correct { 1.0 } else { 0.0 };
        v[TOP_K + 2] = self.true_class as f64 / num_classes.max(1) as f64;
        v
    }
}

/// Queries `model` on each row and records what the adversary observes.
pub fn extract_features(
    model: &Mlp,
    x: ArrayView2<f64>,
    labels: &[usize],
) -> Result<Vec<AttackFeature>> {
    if labels.len() != x.nrows() {
        return Err(Error::Shape(format!(
            "{} label(s) for {} row(s)",
            labels.len(),
            x.nrows()
        )));
    }
    let classes = model.num_classes();
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Label(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let log_p = log_softmax_rows(model.logits(x)?.view());
    Ok(log_p
        .axis_iter(Axis(0))
        .zip(labels)
        .map(|(row, &y)| {
            let mut probs: Vec<f64> = row.iter().map(|l| l.exp()).collect();
            probs.sort_by(|a, b| b.total_cmp(a));
            let mut sorted_posteriors = [0.0; TOP_K];
            for (slot, p) in sorted_posteriors.iter_mut().zip(probs) {
                *slot = p;
            }
            AttackFeature {
                sorted_posteriors,
                sample_loss: (-row[y]).max(0.0),
                correct: argmax(row) == y,
                true_class: y,
            }
        })
        .collect())
}

pub fn features_for_rows<S: RowSource + ?Sized>(
    model: &Mlp,
    data: &S,
    rows: &[usize],
) -> Result<Vec<AttackFeature>> {
    let (x, y) = data.gather(rows)?;
    extract_features(model, x.view(), &y)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowModel {
    pub model: Mlp,
    pub members: Vec<usize>,
    pub nonmembers: Vec<usize>,
    pub train_acc: f64,
    pub holdout_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowEnsemble {
    pub shadows: Vec<ShadowModel>,
}

/// Member and non-member rows per shadow.
///
/// The shuffled pool is cut into folds of `len / max(k, 2)` rows; shadow `i`
/// trains on fold `i` and its non-members are an equal-size sample from the
/// rest of the pool. With `k = 1` this is a plain half/half split.
pub fn plan_shadow_sets(
    pool: &[usize],
    k: usize,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k == 0 {
        return Err(Error::Sizing("need at least one shadow model".into()));
    }
    let fold = pool.len() / k.max(2);
    if fold == 0 {
        return Err(Error::Sizing(format!(
            "shadow pool of {} rows is too small for {k} shadow model(s)",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = pool.to_vec();
    shuffled.shuffle(&mut rng);
    Ok((0..k)
        .map(|i| {
            let members = shuffled[i * fold..(i + 1) * fold].to_vec();
            let rest: Vec<usize> = shuffled[..i * fold]
                .iter()
                .chain(&shuffled[(i + 1) * fold..])
                .copied()
                .collect();
            let nonmembers = if k == 1 {
                rest[..fold].to_vec()
            } else {
                index::sample(&mut rng, rest.len(), fold)
                    .into_iter()
                    .map(|j| rest[j])
                    .collect()
            };
            (members, nonmembers)
        })
        .collect())
}

/// Trains `k` shadows with the target's architecture and hyperparameters.
///
/// Shadow `i` initializes and shuffles with seed `seed + 1 + i`; the pool
/// partition uses `seed` itself.
pub fn train_shadows<S: RowSource + Sync + ?Sized>(
    pool: &[usize],
    data: &S,
    hidden: &[usize],
    config: &TrainConfig,
    k: usize,
    seed: u64,
) -> Result<ShadowEnsemble> {
    config.validate()?;
    let sets = plan_shadow_sets(pool, k, seed)?;
    let dims: Vec<usize> = std::iter::once(data.num_features())
        .chain(hidden.iter().copied())
        .chain(std::iter::once(data.num_classes()))
        .collect();
    let shadows = sets
        .into_par_iter()
        .enumerate()
        .map(|(i, (members, nonmembers))| {
            let shadow_seed = seed.wrapping_add(1 + i as u64);
            let cfg = TrainConfig {
                seed: shadow_seed,
                validation_fraction: 0.0,
                ..config.clone()
            };
            let init = Mlp::new(&dims, shadow_seed)?;
            let (model, _) = train(init, data, &members, &cfg, &EvalSets::default(), |_, _| {})?;
            Ok(ShadowModel {
                train_acc: accuracy_on(&model, data, &members)?,
                holdout_acc: accuracy_on(&model, data, &nonmembers)?,
                model,
                members,
                nonmembers,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ShadowEnsemble { shadows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub feature: AttackFeature,
    pub member: bool,
    pub shadow: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackDataset {
    pub records: Vec<AttackRecord>,
    pub num_classes: usize,
}

impl AttackDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn member_count(&self) -> usize {
        self.records.iter().filter(|r| r.member).count()
    }

    /// Same features with the membership labels randomly permuted.
    pub fn with_permuted_labels(&self, seed: u64) -> AttackDataset {
        let mut labels: Vec<bool> = self.records.iter().map(|r| r.member).collect();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        AttackDataset {
            records: self
                .records
                .iter()
                .zip(labels)
                .map(|(r, member)| AttackRecord {
                    member,
                    ..r.clone()
                })
                .collect(),
            num_classes: self.num_classes,
        }
    }

    /// Seeded split into `(train, holdout)` with `holdout` records held back.
    pub fn split_holdout(&self, holdout: usize, seed: u64) -> (AttackDataset, AttackDataset) {
        let mut order: Vec<usize> = (0..self.records.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let holdout = holdout.min(order.len());
        let pick = |ids: &[usize]| AttackDataset {
            records: ids.iter().map(|&i| self.records[i].clone()).collect(),
            num_classes: self.num_classes,
        };
        (pick(&order[holdout..]), pick(&order[..holdout]))
    }

    /// Features as a 13-column dataset labeled 1 for members.
    pub fn to_dataset(&self) -> Result<Dataset> {
        let mut x = Array2::zeros((self.records.len(), FEATURE_DIM));
        for (mut row, rec) in x.rows_mut().into_iter().zip(&self.records) {
            row.assign(&ndarray::ArrayView1::from(
                &rec.feature.to_vector(self.num_classes),
            ));
        }
        let y = self.records.iter().map(|r| r.member as usize).collect();
        Dataset::new(x, y, 2, "attack")
    }
}

/// Labeled attack records: each shadow's members (label 1) and non-members
/// (label 0), featurized by querying that shadow.
pub fn build_attack_dataset<S: RowSource + ?Sized>(
    ensemble: &ShadowEnsemble,
    data: &S,
) -> Result<AttackDataset> {
    let mut records = Vec::new();
    for (i, shadow) in ensemble.shadows.iter().enumerate() {
        for (rows, member) in [(&shadow.members, true), (&shadow.nonmembers, false)] {
            records.extend(
                features_for_rows(&shadow.model, data, rows)?
                    .into_iter()
                    .map(|feature| AttackRecord {
                        feature,
                        member,
                        shadow: i,
                    }),
            );
        }
    }
    Ok(AttackDataset {
        records,
        num_classes: data.num_classes(),
    })
}

/// Decides membership from attack features.
pub trait MembershipAttack {
    fn predict_membership(&self, features: &[AttackFeature]) -> Result<Vec<bool>>;
}

/// Predicts the same answer for every sample.
#[derive(Clone, Copy, Debug)]
pub struct ConstantAttack(pub bool);

impl MembershipAttack for ConstantAttack {
    fn predict_membership(&self, features: &[AttackFeature]) -> Result<Vec<bool>> {
        Ok(vec![self.0; features.len()])
    }
}

/// Binary MLP over attack features; membership when the posterior exceeds 0.5.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackModel {
    pub model: Mlp,
    pub num_classes: usize,
}

impl AttackModel {
    pub fn membership_probability(&self, features: &[AttackFeature]) -> Result<Vec<f64>> {
        let mut x = Array2::zeros((features.len(), FEATURE_DIM));
        for (mut row, f) in x.rows_mut().into_iter().zip(features) {
            row.assign(&ndarray::ArrayView1::from(&f.to_vector(self.num_classes)));
        }
        let p = self.model.forward(x.view())?;
        Ok(p.column(1).to_vec())
    }
}

impl MembershipAttack for AttackModel {
    fn predict_membership(&self, features: &[AttackFeature]) -> Result<Vec<bool>> {
        Ok(self
            .membership_probability(features)?
            .into_iter()
            .map(|p| p > 0.5)
            .collect())
    }
}

/// Attack classifier defaults: 50 epochs, learning rate 0.01, batch 32.
pub fn default_attack_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 50,
        learning_rate: 0.01,
        batch_size: 32,
        seed,
        validation_fraction: 0.0,
    }
}

/// Fits the attack classifier by SGD on the two-class cross-entropy (the
/// softmax form of binary cross-entropy).
pub fn train_attack_model(
    attack_data: &AttackDataset,
    config: &TrainConfig,
) -> Result<AttackModel> {
    if attack_data.is_empty() {
        return Err(Error::Balance("attack dataset is empty".into()));
    }
    let members = attack_data.member_count();
    if members == 0 || members == attack_data.len() {
        return Err(Error::Balance(format!(
            "attack dataset has a single label ({members} of {} are members)",
            attack_data.len()
        )));
    }
    let ds = attack_data.to_dataset()?;
    let rows: Vec<usize> = (0..ds.len()).collect();
    let init = Mlp::new(&[FEATURE_DIM, ATTACK_HIDDEN, 2], config.seed)?;
    let (model, _) = train(init, &ds, &rows, config, &EvalSets::default(), |_, _| {})?;
    Ok(AttackModel {
        model,
        num_classes: attack_data.num_classes,
    })
}

/// Balanced accuracy together with the counts behind it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiaScore {
    pub balanced_accuracy: f64,
    pub true_positive_rate: f64,
    pub true_negative_rate: f64,
    pub members: usize,
    pub nonmembers: usize,
}

/// `(TPR + TNR) / 2` from raw membership decisions.
pub fn score_predictions(member_preds: &[bool], nonmember_preds: &[bool]) -> Result<MiaScore> {
    if member_preds.is_empty() || nonmember_preds.is_empty() {
        return Err(Error::Empty(format!(
            "MIA needs both sides: {} member(s), {} non-member(s)",
            member_preds.len(),
            nonmember_preds.len()
        )));
    }
    let tpr = member_preds.iter().filter(|&&p| p).count() as f64 / member_preds.len() as f64;
    let tnr = nonmember_preds.iter().filter(|&&p| !p).count() as f64 / nonmember_preds.len() as f64;
    Ok(MiaScore {
        balanced_accuracy: 0.5 * (tpr + tnr),
        true_positive_rate: tpr,
        true_negative_rate: tnr,
        members: member_preds.len(),
        nonmembers: nonmember_preds.len(),
    })
}

pub fn score_features<A: MembershipAttack + ?Sized>(
    attack: &A,
    members: &[AttackFeature],
    nonmembers: &[AttackFeature],
) -> Result<MiaScore> {
    score_predictions(
        &attack.predict_membership(members)?,
        &attack.predict_membership(nonmembers)?,
    )
}

/// Truncates the larger side to the size of the smaller one by a seeded sample.
pub fn balanced_subsample(
    members: &[usize],
    nonmembers: &[usize],
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let m = members.len().min(nonmembers.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut take = |rows: &[usize]| -> Vec<usize> {
        if rows.len() == m {
            rows.to_vec()
        } else {
            let mut picked: Vec<usize> = index::sample(&mut rng, rows.len(), m).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| rows[i]).collect()
        }
    };
    (take(members), take(nonmembers))
}

/// Balanced membership accuracy of `attack` against the current `target`.
pub fn evaluate_mia<A, S>(
    attack: &A,
    target: &Mlp,
    members: &[usize],
    nonmembers: &[usize],
    data: &S,
    seed: u64,
) -> Result<MiaScore>
where
    A: MembershipAttack + ?Sized,
    S: RowSource + ?Sized,
{
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::Empty(format!(
            "MIA needs both sides: {} member(s), {} non-member(s)",
            members.len(),
            nonmembers.len()
        )));
    }
    let (m, n) = balanced_subsample(members, nonmembers, seed);
    score_features(
        attack,
        &features_for_rows(target, data, &m)?,
        &features_for_rows(target, data, &n)?,
    )
}

/// `S = (P(A = 1 | x in forget) + P(A = 0 | x not in train)) / 2`.
///
/// The mean, not the sum, so that a coin-flip adversary scores 0.5.
pub fn adversary_success<A, S>(
    attack: &A,
    unlearned: &Mlp,
    forget: &[usize],
    holdout: &[usize],
    data: &S,
    seed: u64,
) -> Result<f64>
where
    A: MembershipAttack + ?Sized,
    S: RowSource + ?Sized,
{
    let (f, h) = balanced_subsample(forget, holdout, seed);
    let flagged = attack
        .predict_membership(&features_for_rows(unlearned, data, &f)?)?
        .into_iter()
        .filter(|&p| p)
        .count();
    let cleared = attack
        .predict_membership(&features_for_rows(unlearned, data, &h)?)?
        .into_iter()
        .filter(|&p| !p)
        .count();
    if f.is_empty() || h.is_empty() {
        return Err(Error::Empty("adversary success over an empty side".into()));
    }
    Ok(0.5 * (flagged as f64 / f.len() as f64 + cleared as f64 / h.len() as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub mia_forget_acc: f64,
    pub mia_retain_acc: f64,
    pub adversary_success: f64,
    /// Members (= non-members) behind `mia_forget_acc` and `adversary_success`.
    pub forget_pairs: usize,
    /// Members (= non-members) behind `mia_retain_acc`.
    pub retain_pairs: usize,
}

/// Forget-vs-test and retain-vs-test MIA accuracies plus the adversary
/// success rate. The test split supplies the non-members.
pub fn audit<A, S>(
    attack: &A,
    target: &Mlp,
    splits: &SplitBundle,
    data: &S,
    seed: u64,
) -> Result<AttackReport>
where
    A: MembershipAttack + ?Sized,
    S: RowSource + ?Sized,
{
    let forget = evaluate_mia(attack, target, &splits.forget, &splits.test, data, seed)?;
    let retain = evaluate_mia(
        attack,
        target,
        &splits.retain,
        &splits.test,
        data,
        seed.wrapping_add(1),
    )?;
    let success = adversary_success(attack, target, &splits.forget, &splits.test, data, seed)?;
    Ok(AttackReport {
        mia_forget_acc: forget.balanced_accuracy,
        mia_retain_acc: retain.balanced_accuracy,
        adversary_success: success,
        forget_pairs: forget.members,
        retain_pairs: retain.members,
    })
}
