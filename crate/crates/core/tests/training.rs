use ftsqa::cli::{prepare_splits, train_run, RunConfig};
use ftsqa::data::{encode, generate_synthetic, split_dataset, Dataset, UnkPolicy, Vocabulary};
use ftsqa::loss::{LossKind, WrongAnswerPolicy};
use ftsqa::model::Embeddings;
use ftsqa::optim::{train_epoch, HyperParams, OptimizerState};
use ftsqa::{Error, FtsModel, ModelConfig, OutputMode, Variant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn toy(variant: Variant, mode: OutputMode) -> (FtsModel, Dataset) {
    let data = generate_synthetic(4, 5, 2, 3, 11);
    let vocab = Vocabulary::build(&[&data], None, UnkPolicy::TrainableUnk);
    let data = encode(&data, &vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let emb = Embeddings::build(&vocab, None, 6, false, &mut rng).unwrap();
    let cfg = ModelConfig {
        variant,
        output_mode: mode,
        hidden_dim: 6,
        seq_len: (variant == Variant::Shared).then_some(5),
    };
    (FtsModel::new(cfg, emb, &mut rng).unwrap(), data)
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let (mut model, data) = toy(Variant::Fts, OutputMode::Affine);
    let before = model.clone();
    let hp = HyperParams {
        learning_rate: 0.0,
        epochs: 1,
        batch_size: 4,
        ..HyperParams::default()
    };
    let mut state = OptimizerState::default();
    let stats = train_epoch(&mut model, &data, &hp, &mut state, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(stats.mean_loss > 0.0);
    assert_eq!(model, before);
}

#[test]
fn epochs_are_bitwise_reproducible() {
    for (variant, mode) in [
        (Variant::Fts, OutputMode::Affine),
        (Variant::Shared, OutputMode::Concat),
    ] {
        let run = || {
            let (mut model, data) = toy(variant, mode);
            let hp = HyperParams {
                batch_size: 3,
                dropout_rate: 0.5,
                wrong_answers: WrongAnswerPolicy::Sample(2),
                ..HyperParams::default()
            };
            let mut state = OptimizerState::default();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let losses: Vec<u64> = (0..3)
                .map(|_| {
                    train_epoch(&mut model, &data, &hp, &mut state, &mut rng)
                        .unwrap()
                        .mean_loss
                        .to_bits()
                })
                .collect();
            (model, losses)
        };
        let (m1, l1) = run();
        let (m2, l2) = run();
        assert_eq!(l1, l2);
        assert_eq!(m1, m2);
    }
}

#[test]
fn toy_problem_is_fitted() {
    for (variant, mode, kind) in [
        (Variant::Fts, OutputMode::Affine, LossKind::FullTime),
        (Variant::Fts, OutputMode::Affine, LossKind::Pooling),
        (Variant::Shared, OutputMode::Affine, LossKind::FullTime),
        (Variant::Shared, OutputMode::Concat, LossKind::Pooling),
    ] {
        let (mut model, data) = toy(variant, mode);
        let hp = HyperParams {
            learning_rate: 0.01,
            dropout_rate: 0.0,
            batch_size: 5,
            loss_kind: kind,
            ..HyperParams::default()
        };
        let mut state = OptimizerState::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let first = train_epoch(&mut model, &data, &hp, &mut state, &mut rng).unwrap().mean_loss;
        let mut last = first;
        for _ in 0..150 {
            last = train_epoch(&mut model, &data, &hp, &mut state, &mut rng).unwrap().mean_loss;
        }
        assert!(last < 0.05 * first, "{variant:?}/{mode:?}/{kind:?}: {first} -> {last}");
    }
}

#[test]
fn empty_training_set_is_rejected() {
    let (mut model, data) = toy(Variant::Fts, OutputMode::Affine);
    let empty = Dataset {
        questions: vec![],
        ..data
    };
    let err = train_epoch(
        &mut model,
        &empty,
        &HyperParams::default(),
        &mut OptimizerState::default(),
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap_err();
    assert!(matches!(err, Error::EmptyDataset(_)));
}

#[test]
fn diverging_run_reports_non_finite_loss() {
    let (mut model, data) = toy(Variant::Fts, OutputMode::Affine);
    model.out.as_mut().unwrap().bias.as_mut_slice()[0] = f64::NAN;
    let err = train_epoch(
        &mut model,
        &data,
        &HyperParams::default(),
        &mut OptimizerState::default(),
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { batch: 0 }));
}

#[test]
fn shared_run_derives_sequence_length() {
    let data = generate_synthetic(3, 6, 2, 2, 4);
    let (train, valid, test) = split_dataset(&data, 4);
    let prepared = prepare_splits(train, valid, test, None, UnkPolicy::TrainableUnk);
    let mut cfg = RunConfig {
        variant: Variant::Shared,
        hidden_dim: 4,
        embedding_dim: 4,
        ..RunConfig::default()
    };
    cfg.hyper.epochs = 2;
    let summary = train_run(&cfg, &prepared, None).unwrap();
    assert_eq!(summary.last.model.config.seq_len, Some(4));
    assert_eq!(summary.last.config.seq_len, Some(4));
    assert_eq!(summary.metrics.len(), 2);
}
