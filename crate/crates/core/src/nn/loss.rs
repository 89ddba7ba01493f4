//! Softmax, cross-entropy and KL divergence over row-major batches.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Floor added to both arguments of the KL log-ratio.
pub const KL_EPSILON: f64 = 1e-12;

/// Tolerance on `sum(p) == 1` for inputs that must be distributions.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

/// Row-wise log-softmax with max subtraction.
pub fn log_softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|z| z - max - log_sum);
    }
    out
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|z| (z - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|e| e / sum);
    }
    out
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Config(format!(
            "{what} has negative or non-finite entries"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
        return Err(Error::Config(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

/// `KL(p || q) = sum_i p_i ln((p_i + eps) / (q_i + eps))`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "KL arguments have lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    check_distribution(p, "KL first argument")?;
    check_distribution(q, "KL second argument")?;
    Ok(kl_unchecked(p.iter().copied(), q.iter().copied()))
}

pub(crate) fn kl_unchecked(p: impl Iterator<Item = f64>, q: impl Iterator<Item = f64>) -> f64 {
    p.zip(q)
        .map(|(pi, qi)| pi * ((pi + KL_EPSILON) / (qi + KL_EPSILON)).ln())
        .sum()
}

/// Mean of `KL(teacher_row || student_row)` over a batch of posterior rows.
pub fn mean_row_kl(teacher: ArrayView2<f64>, student: ArrayView2<f64>) -> f64 {
    let n = teacher.nrows();
    if n == 0 {
        return 0.0;
    }
    let total: f64 = teacher
        .axis_iter(Axis(0))
        .zip(student.axis_iter(Axis(0)))
        .map(|(t, s)| kl_unchecked(t.iter().copied(), s.iter().copied()))
        .sum();
    total / n as f64
}
