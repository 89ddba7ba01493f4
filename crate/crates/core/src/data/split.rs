use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "class")]
pub enum ForgetMode {
    RandomRows,
    SingleClass(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_fraction: f64,
    pub target_shadow_fraction: f64,
    pub retain_fraction: f64,
    pub forget_mode: ForgetMode,
    pub seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan {
            train_fraction: 0.8,
            target_shadow_fraction: 0.5,
            retain_fraction: 0.8,
            forget_mode: ForgetMode::RandomRows,
            seed: 0,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("train_fraction", self.train_fraction),
            ("target_shadow_fraction", self.target_shadow_fraction),
            ("retain_fraction", self.retain_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!(
                    "{name} must lie strictly inside (0, 1), got {f}"
                )));
            }
        }
        Ok(())
    }
}

/// Index sets over the rows of one dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBundle {
    pub target_train: Vec<usize>,
    pub shadow_pool: Vec<usize>,
    pub test: Vec<usize>,
    pub retain: Vec<usize>,
    pub forget: Vec<usize>,
}

/// Sizes of a two-way cut of `total` rows where the first part has `fraction`.
/// The smaller part gets the floor; the larger part gets the rest.
fn cut(total: usize, fraction: f64) -> (usize, usize) {
    // guard against 0.2 * 100 = 19.999999999999996
    let floor = |x: f64| (x + 1e-9).floor() as usize;
    if fraction <= 0.5 {
        let first = floor(fraction * total as f64).min(total);
        (first, total - first)
    } else {
        let second = floor((1.0 - fraction) * total as f64).min(total);
        (total - second, second)
    }
}

pub fn make_splits(dataset: &Dataset, plan: &SplitPlan) -> Result<SplitBundle> {
    plan.validate()?;
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    order.shuffle(&mut rng);

    let (train_len, test_len) = cut(n, plan.train_fraction);
    let (test, rest) = order.split_at(test_len);
    debug_assert_eq!(rest.len(), train_len);
    let (target_len, _) = cut(rest.len(), plan.target_shadow_fraction);
    let (target_train, shadow_pool) = rest.split_at(target_len);

    let (retain, forget): (Vec<usize>, Vec<usize>) = match plan.forget_mode {
        ForgetMode::RandomRows => {
            let (retain_len, _) = cut(target_train.len(), plan.retain_fraction);
            let (r, f) = target_train.split_at(retain_len);
            (r.to_vec(), f.to_vec())
        }
        ForgetMode::SingleClass(c) => {
            let (f, r): (Vec<usize>, Vec<usize>) =
                target_train.iter().partition(|&&i| dataset.labels[i] == c);
            if f.is_empty() {
                return Err(Error::MissingClass(c));
            }
            (r, f)
        }
    };

    for (name, part) in [
        ("test", test),
        ("target_train", target_train),
        ("shadow_pool", shadow_pool),
        ("retain", retain.as_slice()),
        ("forget", forget.as_slice()),
    ] {
        if part.is_empty() {
            return Err(Error::Split(format!(
                "{name} partition is empty for {n} rows"
            )));
        }
    }

    Ok(SplitBundle {
        target_train: target_train.to_vec(),
        shadow_pool: shadow_pool.to_vec(),
        test: test.to_vec(),
        retain,
        forget,
    })
}
