//! The logistic-regression head on its own and on top of a trained encoder, next to the
//! inner-product decision rule.

use ftsqa::cli::{prepare_splits, train_run, RunConfig};
use ftsqa::data::{generate_synthetic, split_dataset, UnkPolicy};
use ftsqa::infer::{evaluate, fit_lr_head, predict_lr, train_lr, EvalMethod, LrConfig};
use ftsqa::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> ftsqa::Result<()> {
    // three Gaussian blobs
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let centers = [[2.0, 0.0], [-1.0, 1.7], [-1.0, -1.7]];
    let points: Vec<(Tensor, usize)> = (0..150)
        .map(|i| {
            let c = centers[i % 3];
            let x = vec![c[0] + rng.gen_range(-0.8..0.8), c[1] + rng.gen_range(-0.8..0.8)];
            (Tensor::from_vec(x), i % 3)
        })
        .collect();
    let head = train_lr(&points, 3, &LrConfig::default())?;
    let correct = points.iter().filter(|(x, y)| predict_lr(&head, x).ok() == Some(*y)).count();
    println!("blobs: {correct}/{} correct, bias {:?}", points.len(), head.bias.as_slice());

    let data = generate_synthetic(12, 12, 3, 10, 5);
    let (train, valid, test) = split_dataset(&data, 5);
    let prepared = prepare_splits(train, valid, test, None, UnkPolicy::TrainableUnk);
    let mut cfg = RunConfig {
        hidden_dim: 12,
        embedding_dim: 12,
        ..RunConfig::default()
    };
    cfg.hyper.epochs = 40;
    let model = train_run(&cfg, &prepared, None)?.best.model;

    println!("{:>8} {:>8} {:>8}", "l2", "innerp", "lr");
    let innerp = evaluate(&model, &prepared.test, EvalMethod::InnerProduct, None)?;
    for l2 in [1e-4, 1e-2, 1.0] {
        let head = fit_lr_head(&model, &prepared.train, &LrConfig { l2, ..LrConfig::default() })?;
        let lr = evaluate(&model, &prepared.test, EvalMethod::Lr, Some(&head))?;
        println!("{l2:>8.0e} {innerp:>8.3} {lr:>8.3}");
    }
    Ok(())
}
