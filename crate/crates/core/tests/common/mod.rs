#![allow(dead_code)]

use std::path::Path;

use unlearn_audit::data::{generate_synthetic, save_tabular, SyntheticSpec, TabularFormat};
use unlearn_audit::harness::{DataSource, ExperimentConfig};
use unlearn_audit::nn::TrainConfig;
use unlearn_audit::unlearn::UnlearnMethod;

/// Well-separated 5-class blobs; the target generalizes (train ~ test).
pub fn base_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::with_synthetic(SyntheticSpec {
        n_samples: 2000,
        n_features: 20,
        n_classes: 5,
        class_separation: 3.0,
        seed: 0,
    });
    cfg.target = TrainConfig {
        epochs: 100,
        learning_rate: 0.01,
        batch_size: 32,
        seed: 0,
        validation_fraction: 0.1,
    };
    cfg.unlearn_batch_size = 32;
    cfg
}

/// 50 classes with 16 training rows each: the target memorizes its training
/// set (train accuracy 1.0, test accuracy ~0.2).
pub fn overfit_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::with_synthetic(SyntheticSpec {
        n_samples: 2000,
        n_features: 60,
        n_classes: 50,
        class_separation: 3.0,
        seed: 0,
    });
    cfg.target = TrainConfig {
        epochs: 100,
        learning_rate: 0.05,
        batch_size: 32,
        seed: 0,
        validation_fraction: 0.1,
    };
    cfg.method = UnlearnMethod::NegGrad {
        learning_rate: 0.05,
    };
    cfg.unlearn_epochs = 50;
    cfg.unlearn_batch_size = 32;
    cfg
}

/// Purchase-style data: 600 binary features, 20 classes, written to `dir`
/// in the binary format and read back by the harness.
pub fn purchase_config(dir: &Path) -> ExperimentConfig {
    let spec = SyntheticSpec {
        n_samples: 2000,
        n_features: 600,
        n_classes: 20,
        class_separation: 3.0,
        seed: 0,
    };
    let path = dir.join("purchase.bin");
    let ds = generate_synthetic(&spec).unwrap().binarized();
    save_tabular(&ds, &path, TabularFormat::BinaryF32).unwrap();
    let mut cfg = ExperimentConfig::with_synthetic(spec);
    cfg.dataset = DataSource::File {
        path,
        format: TabularFormat::BinaryF32,
    };
    cfg.target.batch_size = 32;
    cfg.method = UnlearnMethod::sftc(0.01);
    cfg.unlearn_epochs = 20;
    cfg.unlearn_batch_size = 32;
    cfg.output_dir = dir.join("out");
    cfg
}

/// Small, fast configuration for plumbing tests.
pub fn tiny_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::with_synthetic(SyntheticSpec {
        n_samples: 400,
        n_features: 8,
        n_classes: 4,
        class_separation: 2.0,
        seed: 3,
    });
    cfg.hidden = vec![16];
    cfg.target.epochs = 10;
    cfg.target.learning_rate = 0.05;
    cfg.shadow_count = 2;
    cfg.attack.epochs = 5;
    cfg.unlearn_epochs = 3;
    cfg.unlearn_batch_size = 16;
    cfg.output_dir = out.to_path_buf();
    cfg.seed = 5;
    cfg
}

/// Least-squares slope of `ys` against `0..ys.len()`.
pub fn slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        num += (i as f64 - mx) * (y - my);
        den += (i as f64 - mx).powi(2);
    }
    num / den
}

/// Cross-entropy of each row, computed directly from logits.
pub fn row_losses(logits: &ndarray::Array2<f64>, labels: &[usize]) -> Vec<f64> {
    logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - row[y]
        })
        .collect()
}
