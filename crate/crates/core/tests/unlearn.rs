use std::cell::RefCell;
use std::collections::HashSet;

use ndarray::{Array1, Array2};

use unlearn_audit::data::{
    generate_synthetic, make_splits, Dataset, RowSource, SplitBundle, SplitPlan, SyntheticSpec,
};
use unlearn_audit::mia::AttackReport;
use unlearn_audit::nn::{
    accuracy_on, epoch_metrics, mean_loss_on, mean_row_kl, train, Dense, EpochMetrics, EvalSets,
    Mlp, TrainConfig,
};
use unlearn_audit::unlearn::{
    draw_confusion_labels, epoch_rng, neggrad_epoch, run_unlearning, scrub_epoch, sftc_epoch,
    ConfusionResample, UnlearnMethod,
};
use unlearn_audit::Result;

/// Records every row index it is asked for.
struct Audited<'a> {
    inner: &'a Dataset,
    touched: RefCell<HashSet<usize>>,
}

impl RowSource for Audited<'_> {
    fn num_rows(&self) -> usize {
        self.inner.num_rows()
    }
    fn num_features(&self) -> usize {
        self.inner.num_features()
    }
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }
    fn gather(&self, rows: &[usize]) -> Result<(Array2<f64>, Vec<usize>)> {
        self.touched.borrow_mut().extend(rows);
        self.inner.gather(rows)
    }
}

fn fixture() -> (Dataset, SplitBundle, Mlp) {
    let ds = generate_synthetic(&SyntheticSpec {
        n_samples: 600,
        n_features: 8,
        n_classes: 4,
        class_separation: 2.5,
        seed: 6,
    })
    .unwrap();
    let splits = make_splits(&ds, &SplitPlan::default()).unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        learning_rate: 0.05,
        batch_size: 16,
        seed: 2,
        validation_fraction: 0.0,
    };
    let (model, _) = train(
        Mlp::new(&[8, 32, 4], 2).unwrap(),
        &ds,
        &splits.target_train,
        &cfg,
        &EvalSets::default(),
        |_, _| {},
    )
    .unwrap();
    (ds, splits, model)
}

fn metrics_hook<'a>(
    ds: &'a Dataset,
    splits: &'a SplitBundle,
) -> impl FnMut(&Mlp, usize) -> Result<(EpochMetrics, AttackReport)> + 'a {
    move |m, epoch| {
        let eval = EvalSets {
            forget: Some(&splits.forget),
            retain: Some(&splits.retain),
            test: Some(&splits.test),
            validation: None,
        };
        let loss = mean_loss_on(m, ds, &splits.retain)?;
        Ok((
            epoch_metrics(m, ds, epoch, &splits.target_train, &eval, loss)?,
            AttackReport {
                mia_forget_acc: 0.5,
                mia_retain_acc: 0.5,
                adversary_success: 0.5,
                forget_pairs: 0,
                retain_pairs: 0,
            },
        ))
    }
}

#[test]
fn neggrad_reads_only_forget_rows() {
    let (ds, splits, model) = fixture();
    let audited = Audited {
        inner: &ds,
        touched: RefCell::new(HashSet::new()),
    };
    let method = UnlearnMethod::NegGrad {
        learning_rate: 0.01,
    };
    let mut m = model.clone();
    for epoch in 1..=3 {
        neggrad_epoch(
            &mut m,
            &audited,
            &splits.forget,
            0.01,
            8,
            &mut epoch_rng(1, epoch),
        )
        .unwrap();
    }
    let touched = audited.touched.into_inner();
    let forget: HashSet<usize> = splits.forget.iter().copied().collect();
    assert!(touched.is_subset(&forget));
    assert!(splits.retain.iter().all(|r| !touched.contains(r)));
    assert!(method.validate().is_ok());
}

#[test]
fn neggrad_raises_the_loss_of_a_single_forget_sample() {
    // One linear layer, two classes: the softmax cross-entropy is convex in
    // the parameters and a small ascent step must increase it.
    let layer = Dense {
        weights: Array2::from_shape_vec((2, 3), vec![0.3, -0.2, 0.1, -0.1, 0.4, 0.2]).unwrap(),
        bias: Array1::from(vec![0.05, -0.05]),
    };
    let mut model = Mlp::from_layers(vec![layer]).unwrap();
    let ds = Dataset::new(
        Array2::from_shape_vec((2, 3), vec![1.0, 0.5, -0.5, 0.2, 0.1, 0.3]).unwrap(),
        vec![0, 1],
        2,
        "single",
    )
    .unwrap();
    let before = mean_loss_on(&model, &ds, &[0]).unwrap();
    neggrad_epoch(&mut model, &ds, &[0], 1e-3, 1, &mut epoch_rng(0, 1)).unwrap();
    let after = mean_loss_on(&model, &ds, &[0]).unwrap();
    assert!(after > before, "{after} <= {before}");
}

#[test]
fn vanishing_rates_leave_the_model_frozen() {
    let (ds, splits, model) = fixture();
    let mut m = model.clone();
    neggrad_epoch(&mut m, &ds, &splits.forget, 1e-12, 8, &mut epoch_rng(0, 1)).unwrap();
    for (a, b) in m.to_flat().iter().zip(model.to_flat()) {
        assert!((a - b).abs() < 1e-9);
    }

    let method = UnlearnMethod::NegGrad {
        learning_rate: 1e-12,
    };
    let (_, trace) = run_unlearning(
        model,
        &ds,
        &splits,
        &method,
        5,
        8,
        0,
        metrics_hook(&ds, &splits),
    )
    .unwrap();
    assert_eq!(trace.entries.len(), 5);
    let first = &trace.entries[0].metrics;
    for (i, e) in trace.entries.iter().enumerate() {
        assert_eq!(e.metrics.epoch, i + 1);
        assert!((e.metrics.train_acc - first.train_acc).abs() < 1e-6);
        assert!((e.metrics.mean_loss - first.mean_loss).abs() < 1e-6);
    }
}

#[test]
fn zero_epochs_return_the_model_unchanged() {
    let (ds, splits, model) = fixture();
    let (out, trace) = run_unlearning(
        model.clone(),
        &ds,
        &splits,
        &UnlearnMethod::scrub(0.01),
        0,
        8,
        0,
        metrics_hook(&ds, &splits),
    )
    .unwrap();
    assert_eq!(out, model);
    assert!(trace.entries.is_empty());
    assert_eq!(trace.epochs_run, 0);
}

#[test]
fn runs_are_reproducible_per_seed() {
    let (ds, splits, model) = fixture();
    for method in [
        UnlearnMethod::NegGrad {
            learning_rate: 0.01,
        },
        UnlearnMethod::scrub(0.01),
        UnlearnMethod::sftc(0.01),
    ] {
        let run = |seed| {
            run_unlearning(
                model.clone(),
                &ds,
                &splits,
                &method,
                3,
                8,
                seed,
                metrics_hook(&ds, &splits),
            )
            .unwrap()
        };
        let (a, ta) = run(4);
        let (b, tb) = run(4);
        assert_eq!(a, b, "{}", method.name());
        assert_eq!(ta, tb);
    }
}

#[test]
fn scrub_leaves_the_teacher_untouched_and_starts_at_zero_divergence() {
    let (ds, splits, teacher) = fixture();
    let snapshot = teacher.clone();
    let (rx, _) = ds.gather(&splits.retain).unwrap();
    let p = teacher.forward(rx.view()).unwrap();
    assert!(mean_row_kl(p.view(), p.view()).abs() < 1e-12);
    let mut student = teacher.clone();
    for epoch in 1..=3 {
        scrub_epoch(
            &mut student,
            &teacher,
            &ds,
            &splits.retain,
            &splits.forget,
            0.01,
            0.5,
            1.0,
            8,
            &mut epoch_rng(0, epoch),
        )
        .unwrap();
    }
    assert_eq!(teacher, snapshot);
    assert_ne!(student, teacher);
}

#[test]
fn scrub_pushes_forget_outputs_away_from_the_teacher() {
    // Two classes, 200 retain rows, 20 forget rows, 30 epochs.
    let ds = generate_synthetic(&SyntheticSpec {
        n_samples: 600,
        n_features: 6,
        n_classes: 2,
        class_separation: 3.0,
        seed: 8,
    })
    .unwrap();
    let splits = SplitBundle {
        target_train: (0..220).collect(),
        shadow_pool: (220..400).collect(),
        test: (400..600).collect(),
        retain: (0..200).collect(),
        forget: (200..220).collect(),
    };
    let cfg = TrainConfig {
        epochs: 30,
        learning_rate: 0.05,
        batch_size: 16,
        seed: 1,
        validation_fraction: 0.0,
    };
    let (teacher, _) = train(
        Mlp::new(&[6, 16, 2], 1).unwrap(),
        &ds,
        &splits.target_train,
        &cfg,
        &EvalSets::default(),
        |_, _| {},
    )
    .unwrap();
    let (student, _) = run_unlearning(
        teacher.clone(),
        &ds,
        &splits,
        &UnlearnMethod::scrub(0.01),
        30,
        16,
        3,
        metrics_hook(&ds, &splits),
    )
    .unwrap();
    let (fx, _) = ds.gather(&splits.forget).unwrap();
    let pt = teacher.forward(fx.view()).unwrap();
    let kl_end = mean_row_kl(pt.view(), student.forward(fx.view()).unwrap().view());
    assert!(kl_end > 0.0);
    let r0 = accuracy_on(&teacher, &ds, &splits.retain).unwrap();
    let r1 = accuracy_on(&student, &ds, &splits.retain).unwrap();
    assert!((r1 - r0).abs() <= 0.05, "retain accuracy {r0} -> {r1}");
}

#[test]
fn confusion_labels_are_always_wrong() {
    let labels: Vec<usize> = (0..1000).map(|i| i % 7).collect();
    let confusion = draw_confusion_labels(&labels, 7, &mut epoch_rng(5, 0)).unwrap();
    assert_eq!(confusion.len(), 1000);
    for (c, y) in confusion.iter().zip(&labels) {
        assert_ne!(c, y);
        assert!(*c < 7);
    }
    let used: HashSet<usize> = confusion.iter().copied().collect();
    assert_eq!(used.len(), 7);
    assert!(draw_confusion_labels(&[0], 1, &mut epoch_rng(0, 0)).is_err());
}

#[test]
fn sftc_resampling_modes_differ_only_in_label_draws() {
    let (ds, splits, model) = fixture();
    let once = UnlearnMethod::Sftc {
        learning_rate: 0.01,
        confusion_resample: ConfusionResample::Once,
    };
    let per_epoch = UnlearnMethod::sftc(0.01);
    let (a, _) = run_unlearning(
        model.clone(),
        &ds,
        &splits,
        &once,
        2,
        8,
        1,
        metrics_hook(&ds, &splits),
    )
    .unwrap();
    let (b, _) = run_unlearning(
        model.clone(),
        &ds,
        &splits,
        &per_epoch,
        2,
        8,
        1,
        metrics_hook(&ds, &splits),
    )
    .unwrap();
    assert_ne!(a, b);

    let mut single = model.clone();
    let confusion = vec![1; splits.forget.len()];
    sftc_epoch(
        &mut single,
        &ds,
        &splits.retain,
        &splits.forget,
        0.01,
        Some(&confusion),
        8,
        &mut epoch_rng(1, 1),
    )
    .unwrap();
    assert!(single.is_finite());
}
