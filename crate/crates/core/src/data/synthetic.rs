use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Gaussian class blobs with unit-variance noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_classes: usize,
    /// Distance between class centroids, in units of the noise standard deviation.
    pub class_separation: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.n_features == 0 || self.n_classes == 0 {
            return Err(Error::Config(
                "synthetic n_samples, n_features and n_classes must be positive".into(),
            ));
        }
        if self.n_samples < self.n_classes {
            return Err(Error::Config(format!(
                "{} samples cannot cover {} classes",
                self.n_samples, self.n_classes
            )));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return Err(Error::Config(format!(
                "class separation must be positive, got {}",
                self.class_separation
            )));
        }
        Ok(())
    }
}

/// Centroids at pairwise distance `separation`: an orthonormal frame scaled by
/// `separation / sqrt(2)` when `classes <= dim`, random unit directions otherwise.
fn centroids(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Array1<f64>> {
    let d = spec.n_features;
    let scale = spec.class_separation / 2f64.sqrt();
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(spec.n_classes);
    for _ in 0..spec.n_classes {
        let mut v: Array1<f64> = Array1::from_shape_simple_fn(d, || StandardNormal.sample(rng));
        if basis.len() < d {
            for b in &basis {
                let proj = v.dot(b);
                v.scaled_add(-proj, b);
            }
        }
        let norm = v.dot(&v).sqrt();
        basis.push(v / norm);
    }
    if spec.n_classes == 2 {
        // two classes: +/- half the separation along one direction
        let half = spec.class_separation / 2.0;
        let u = basis[0].clone();
        return vec![&u * half, &u * -half];
    }
    basis.into_iter().map(|u| u * scale).collect()
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers = centroids(spec, &mut rng);
    let labels: Vec<usize> = (0..spec.n_samples).map(|i| i % spec.n_classes).collect();
    let mut features = Array2::zeros((spec.n_samples, spec.n_features));
    for (mut row, &y) in features.rows_mut().into_iter().zip(&labels) {
        for (x, c) in row.iter_mut().zip(centers[y].iter()) {
            let noise: f64 = StandardNormal.sample(&mut rng);
            *x = c + noise;
        }
    }
    Dataset::new(
        features,
        labels,
        spec.n_classes,
        format!(
            "synthetic-n{}-d{}-c{}",
            spec.n_samples, spec.n_features, spec.n_classes
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, d: usize, c: usize, sep: f64) -> SyntheticSpec {
        SyntheticSpec {
            n_samples: n,
            n_features: d,
            n_classes: c,
            class_separation: sep,
            seed: 3,
        }
    }

    #[test]
    fn classes_are_balanced() {
        let ds = generate_synthetic(&spec(100, 5, 4, 2.0)).unwrap();
        for c in 0..4 {
            assert_eq!(ds.labels.iter().filter(|&&y| y == c).count(), 25);
        }
        let ds = generate_synthetic(&spec(103, 5, 4, 2.0)).unwrap();
        for c in 0..4 {
            let count = ds.labels.iter().filter(|&&y| y == c).count();
            assert!((25..=26).contains(&count));
        }
    }

    #[test]
    fn centroid_distances_match_separation() {
        let s = spec(10, 8, 5, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = centroids(&s, &mut rng);
        for i in 0..5 {
            for j in i + 1..5 {
                let diff = &c[i] - &c[j];
                assert!((diff.dot(&diff).sqrt() - 3.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate_synthetic(&spec(50, 4, 3, 2.0)).unwrap();
        let b = generate_synthetic(&spec(50, 4, 3, 2.0)).unwrap();
        assert_eq!(a, b);
        let mut other = spec(50, 4, 3, 2.0);
        other.seed = 4;
        assert_ne!(a.features, generate_synthetic(&other).unwrap().features);
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(generate_synthetic(&spec(2, 4, 3, 2.0)).is_err());
        assert!(generate_synthetic(&spec(10, 4, 3, 0.0)).is_err());
        assert!(generate_synthetic(&spec(10, 0, 3, 1.0)).is_err());
    }
}
