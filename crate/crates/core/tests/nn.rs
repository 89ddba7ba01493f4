mod common;

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use unlearn_audit::data::{generate_synthetic, SyntheticSpec};
use unlearn_audit::nn::{
    argmax, kl_divergence, softmax_rows, train, Dense, Direction, EvalSets, Gradients, Mlp,
    TrainConfig,
};
use unlearn_audit::Error;

use common::row_losses;

fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize, c: usize) -> (Array2<f64>, Vec<usize>) {
    let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
    let y = (0..n).map(|_| rng.random_range(0..c)).collect();
    (x, y)
}

fn mean_loss(model: &Mlp, x: &Array2<f64>, y: &[usize]) -> f64 {
    let l = row_losses(&model.logits(x.view()).unwrap(), y);
    l.iter().sum::<f64>() / l.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gradients_match_finite_differences(
        hidden in prop::collection::vec(1usize..7, 0..3),
        d in 1usize..6,
        c in 2usize..5,
        n in 1usize..5,
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims: Vec<usize> = std::iter::once(d).chain(hidden).chain(std::iter::once(c)).collect();
        let mut model = Mlp::new(&dims, seed).unwrap();
        let (x, y) = random_batch(&mut rng, n, d, c);
        let (loss, grads) = model.loss_and_grad(x.view(), &y, None).unwrap();
        prop_assert!((loss - mean_loss(&model, &x, &y)).abs() < 1e-12);
        let analytic = grads.to_flat();
        let h = 1e-4;
        for (i, &a) in analytic.iter().enumerate() {
            let orig = *model.param_mut(i).unwrap();
            *model.param_mut(i).unwrap() = orig + h;
            let up = mean_loss(&model, &x, &y);
            *model.param_mut(i).unwrap() = orig - h;
            let down = mean_loss(&model, &x, &y);
            *model.param_mut(i).unwrap() = orig;
            // One-sided slopes that disagree mean a ReLU kink sits inside
            // the stencil; central differences are meaningless there.
            let (fwd, bwd) = ((up - loss) / h, (loss - down) / h);
            if (fwd - bwd).abs() > 1e-2 * (fwd.abs() + bwd.abs()) + 1e-6 {
                continue;
            }
            let numeric = (up - down) / (2.0 * h);
            let scale = a.abs().max(numeric.abs()).max(1e-6);
            prop_assert!(
                (a - numeric).abs() / scale < 1e-4,
                "coordinate {i}: analytic {} numeric {numeric}", analytic[i]
            );
        }
    }

    #[test]
    fn softmax_rows_are_distributions(
        logits in prop::collection::vec(-1e4f64..1e4, 1..40),
        width in 1usize..8,
    ) {
        let rows = logits.len() / width;
        prop_assume!(rows > 0);
        let m = Array2::from_shape_vec((rows, width), logits[..rows * width].to_vec()).unwrap();
        let p = softmax_rows(m.view());
        for row in p.rows() {
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn descend_then_ascend_is_identity(seed in 0u64..500, lr in 1e-4f64..1.0) {
        let mut model = Mlp::new(&[3, 5, 4, 2], seed).unwrap();
        let before = model.to_flat();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = random_batch(&mut rng, 6, 3, 2);
        let (_, grads) = model.loss_and_grad(x.view(), &y, None).unwrap();
        model.apply_step(&grads, lr, Direction::Descend).unwrap();
        model.apply_step(&grads, lr, Direction::Ascend).unwrap();
        for (a, b) in model.to_flat().iter().zip(&before) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn kl_is_nonnegative(raw_p in prop::collection::vec(0.0f64..1.0, 2..10), seed in 0u64..100) {
        let total: f64 = raw_p.iter().sum();
        prop_assume!(total > 1e-6);
        let p: Vec<f64> = raw_p.iter().map(|v| v / total).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw_q: Vec<f64> = p.iter().map(|_| rng.random_range(0.01..1.0)).collect();
        let qs: f64 = raw_q.iter().sum();
        let q: Vec<f64> = raw_q.iter().map(|v| v / qs).collect();
        prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-9);
        prop_assert!(kl_divergence(&p, &p).unwrap().abs() <= 1e-9);
    }
}

#[test]
fn accuracy_matches_hand_enumerated_argmax() {
    let model = Mlp::new(&[4, 6, 3], 17).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (x, y) = random_batch(&mut rng, 5, 4, 3);
    let logits = model.logits(x.view()).unwrap();
    let mut hits = 0;
    for (row, &label) in logits.rows().into_iter().zip(&y) {
        let mut best = 0;
        for k in 1..row.len() {
            if row[k] > row[best] {
                best = k;
            }
        }
        hits += (best == label) as usize;
    }
    assert_eq!(model.accuracy(x.view(), &y).unwrap(), hits as f64 / 5.0);

    let own: Vec<usize> = model.predict(x.view()).unwrap();
    assert_eq!(model.accuracy(x.view(), &own).unwrap(), 1.0);
}

#[test]
fn constant_model_on_balanced_classes() {
    let model = Mlp::zeros(&[3, 10]).unwrap();
    let x = Array2::from_elem((100, 3), 0.7);
    let y: Vec<usize> = (0..100).map(|i| i % 10).collect();
    assert!((model.accuracy(x.view(), &y).unwrap() - 0.1).abs() < 1e-12);
    assert_eq!(argmax(Array1::from(vec![2.0, 2.0, 1.0]).view()), 0);
}

#[test]
fn single_parameter_step() {
    let layer = Dense {
        weights: Array2::from_elem((1, 1), 1.0),
        bias: Array1::zeros(1),
    };
    let mut model = Mlp::from_layers(vec![layer]).unwrap();
    let mut grads = Gradients::zeros_like(&model);
    grads.weights[0][[0, 0]] = 0.5;
    model.apply_step(&grads, 0.1, Direction::Ascend).unwrap();
    assert!((model.layers()[0].weights[[0, 0]] - 1.05).abs() < 1e-15);
}

/// Full-batch logistic regression by gradient descent, written out by hand.
fn logistic_regression_accuracy(x: &Array2<f64>, y: &[usize]) -> f64 {
    let (n, d) = x.dim();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    for _ in 0..500 {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for i in 0..n {
            let z: f64 = (0..d).map(|j| w[j] * x[[i, j]]).sum::<f64>() + b;
            let err = 1.0 / (1.0 + (-z).exp()) - y[i] as f64;
            for j in 0..d {
                gw[j] += err * x[[i, j]] / n as f64;
            }
            gb += err / n as f64;
        }
        for j in 0..d {
            w[j] -= 0.5 * gw[j];
        }
        b -= 0.5 * gb;
    }
    let hits = (0..n)
        .filter(|&i| {
            let z: f64 = (0..d).map(|j| w[j] * x[[i, j]]).sum::<f64>() + b;
            (z > 0.0) as usize == y[i]
        })
        .count();
    hits as f64 / n as f64
}

#[test]
fn separable_blobs_are_learned_like_logistic_regression() {
    let ds = generate_synthetic(&SyntheticSpec {
        n_samples: 200,
        n_features: 5,
        n_classes: 2,
        class_separation: 6.0,
        seed: 4,
    })
    .unwrap();
    let oracle = logistic_regression_accuracy(&ds.features, &ds.labels);
    assert!(oracle >= 0.99, "logistic regression reached {oracle}");

    let rows: Vec<usize> = (0..ds.len()).collect();
    let cfg = TrainConfig {
        epochs: 50,
        learning_rate: 0.1,
        batch_size: 64,
        seed: 1,
        validation_fraction: 0.0,
    };
    let run = || {
        train(
            Mlp::new(&[5, 16, 2], 1).unwrap(),
            &ds,
            &rows,
            &cfg,
            &EvalSets::default(),
            |_, _| {},
        )
        .unwrap()
    };
    let (model, history) = run();
    let acc = model.accuracy(ds.features.view(), &ds.labels).unwrap();
    assert!(acc >= 0.99, "MLP reached {acc}");
    assert!(acc >= oracle - 0.01);
    assert_eq!(run().1, history);
}

#[test]
fn non_finite_inputs_abort() {
    let model = Mlp::new(&[2, 3, 2], 0).unwrap();
    let mut x = Array2::zeros((2, 2));
    x[[1, 0]] = f64::NAN;
    assert!(matches!(
        model.loss_and_grad(x.view(), &[0, 1], None),
        Err(Error::NonFinite(_))
    ));
}
