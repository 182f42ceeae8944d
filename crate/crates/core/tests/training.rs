mod common;

use asag::classifier::{
    train, Backend, Checkpoint, ClassifierConfig, ClassifierError, FineTuneStep, Init,
    ReferenceBackend, ReferenceOptions, StopReason, ToyBackend, ToyOptions,
};
use asag::{QuestionId, ResponseRecord};
use common::{random_label, rng, ScriptedBackend};
use rand::Rng;

fn scripted(
    script: Vec<f64>,
    patience: usize,
    max_epochs: usize,
) -> (Checkpoint, asag::classifier::TrainingReport) {
    let b = ScriptedBackend { script, n_val: 40 };
    let (tr, val) = b.records(16);
    let cfg = ClassifierConfig {
        learning_rate: 1.0,
        patience_epochs: patience,
        max_epochs,
        ..ClassifierConfig::default()
    };
    train(
        &b,
        Init::Fresh,
        &tr,
        &val,
        &cfg,
        FineTuneStep::new("Q1", 1.0),
    )
    .unwrap()
}

#[test]
fn stops_at_best_plus_patience() {
    let (ckpt, rep) = scripted(vec![0.5, 0.7, 0.6, 0.6, 0.6, 0.6], 4, 100);
    assert_eq!((rep.best_epoch, rep.history.len()), (2, 6));
    assert_eq!(rep.stop_reason, StopReason::PatienceExhausted);
    assert_eq!(rep.best_val_accuracy, Some(0.7));
    assert_eq!(ckpt.params[0].round(), 2.0);
    let epochs: Vec<usize> = rep.history.iter().map(|h| h.epoch).collect();
    assert_eq!(epochs, (1..=6).collect::<Vec<_>>());
}

#[test]
fn ties_do_not_reset_patience() {
    let (_, rep) = scripted(vec![0.5, 0.5, 0.5, 0.5], 3, 100);
    assert_eq!((rep.best_epoch, rep.history.len()), (1, 4));
}

#[test]
fn single_epoch_budget() {
    let (ckpt, rep) = scripted(vec![0.25], 10, 1);
    assert_eq!(
        (rep.best_epoch, rep.stop_reason),
        (1, StopReason::MaxEpochs)
    );
    assert_eq!(ckpt.params[0].round(), 1.0);
}

fn toy_records(n: usize, seed: u64) -> Vec<ResponseRecord> {
    let mut r = rng(seed);
    let words = [
        "stop", "codon", "shorter", "protein", "no", "effect", "rna", "ends", "early",
    ];
    (0..n)
        .map(|i| {
            let text: Vec<&str> = (0..r.gen_range(2..7))
                .map(|_| words[r.gen_range(0..words.len())])
                .collect();
            ResponseRecord::new(
                format!("s{seed}-{i}"),
                QuestionId::q1(),
                text.join(" "),
                random_label(&mut r),
            )
        })
        .collect()
}

#[test]
fn empty_train_set_is_identity() {
    let b = ToyBackend::new(ToyOptions::default());
    let base = Checkpoint::fresh(&b, 3);
    let val = toy_records(5, 1);
    let (ckpt, rep) = train(
        &b,
        Init::From(&base),
        &[],
        &val,
        &ClassifierConfig::default(),
        FineTuneStep::new("Q2", 0.0),
    )
    .unwrap();
    assert_eq!(ckpt.params, base.params);
    assert_eq!(rep.stop_reason, StopReason::EmptyTrain);
    assert_eq!(rep.best_epoch, 0);
    assert_eq!(ckpt.model_name(), "BMQ2");
}

#[test]
fn training_is_deterministic_and_validates_inputs() {
    let b = ToyBackend::new(ToyOptions {
        buckets: 64,
        init_scale: 0.01,
    });
    let tr = toy_records(40, 2);
    let val = toy_records(12, 3);
    let cfg = ClassifierConfig {
        learning_rate: 0.05,
        max_epochs: 15,
        seed: 5,
        ..ClassifierConfig::default()
    };
    let a = train(
        &b,
        Init::Fresh,
        &tr,
        &val,
        &cfg,
        FineTuneStep::new("Q1", 1.0),
    )
    .unwrap();
    let c = train(
        &b,
        Init::Fresh,
        &tr,
        &val,
        &cfg,
        FineTuneStep::new("Q1", 1.0),
    )
    .unwrap();
    assert_eq!(a, c);
    assert_eq!(a.1.effective_train_records, 32);
    assert!(matches!(
        train(
            &b,
            Init::Fresh,
            &tr,
            &[],
            &cfg,
            FineTuneStep::new("Q1", 1.0)
        ),
        Err(ClassifierError::EmptyValidation)
    ));
    let bad = ClassifierConfig {
        batch_size: 0,
        ..cfg.clone()
    };
    assert!(matches!(
        train(
            &b,
            Init::Fresh,
            &tr,
            &val,
            &bad,
            FineTuneStep::new("Q1", 1.0)
        ),
        Err(ClassifierError::InvalidConfig(_))
    ));
    let other = ReferenceBackend::new(ReferenceOptions {
        encoder_width: 8,
        intermediate_units: 4,
    });
    let foreign = Checkpoint::fresh(&other, 0);
    assert!(matches!(
        train(
            &b,
            Init::From(&foreign),
            &tr,
            &val,
            &cfg,
            FineTuneStep::new("Q1", 1.0)
        ),
        Err(ClassifierError::BackendMismatch { .. })
    ));
}

/// Norm-based relative error between analytic and central-difference gradients.
fn gradient_error(b: &dyn Backend, params: &[f64], batch: &[ResponseRecord]) -> f64 {
    let refs: Vec<&ResponseRecord> = batch.iter().collect();
    let (_, g) = b.loss_and_grad(params, &refs);
    let h = 1e-6;
    let mut num = Vec::with_capacity(params.len());
    let mut p = params.to_vec();
    for j in 0..params.len() {
        p[j] = params[j] + h;
        let up = b.loss_and_grad(&p, &refs).0;
        p[j] = params[j] - h;
        let down = b.loss_and_grad(&p, &refs).0;
        p[j] = params[j];
        num.push((up - down) / (2.0 * h));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = g.iter().zip(&num).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(&g).max(norm(&num)).max(1e-12)
}

#[test]
fn toy_gradients_match_finite_differences() {
    for seed in 0..20 {
        let b = ToyBackend::new(ToyOptions {
            buckets: 5 + seed as usize,
            init_scale: 0.8,
        });
        let err = gradient_error(&b, &b.init_params(seed), &toy_records(3, seed));
        assert!(err < 1e-4, "seed {seed}: {err:e}");
    }
}

#[test]
fn reference_gradients_match_finite_differences() {
    for seed in 0..10 {
        let b = ReferenceBackend::new(ReferenceOptions {
            encoder_width: 6,
            intermediate_units: 5,
        });
        let err = gradient_error(&b, &b.init_params(seed), &toy_records(4, seed));
        assert!(err < 1e-4, "seed {seed}: {err:e}");
    }
}
