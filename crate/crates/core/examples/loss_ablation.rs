//! Full-time loss against pooling loss, with and without the output layer, averaged over
//! several seeds of the synthetic benchmark.
//!
//! ```text
//! cargo run --release --example loss_ablation [seeds] [epochs]
//! ```

use ftsqa::cli::{prepare_splits, train_run, RunConfig};
use ftsqa::data::{generate_synthetic, split_dataset, UnkPolicy};
use ftsqa::infer::{evaluate, EvalMethod};
use ftsqa::loss::LossKind;
use ftsqa::{OutputMode, Variant};

fn accuracy(variant: Variant, mode: OutputMode, loss: LossKind, seed: u64, epochs: usize) -> ftsqa::Result<(f64, f64)> {
    let data = generate_synthetic(20, 15, 3, 12, seed);
    let (train, valid, test) = split_dataset(&data, seed);
    let prepared = prepare_splits(train, valid, test, None, UnkPolicy::TrainableUnk);
    let mut cfg = RunConfig {
        variant,
        output_mode: mode,
        hidden_dim: 16,
        embedding_dim: 16,
        ..RunConfig::default()
    };
    let hp = &mut cfg.hyper;
    hp.loss_kind = loss;
    hp.dropout_rate = 0.3;
    hp.batch_size = 16;
    hp.epochs = epochs;
    hp.seed = seed;
    let summary = train_run(&cfg, &prepared, None)?;
    let best = &summary.best;
    Ok((
        evaluate(&best.model, &prepared.test, EvalMethod::InnerProduct, None)?,
        evaluate(&best.model, &prepared.test, EvalMethod::Lr, best.lr_head.as_ref())?,
    ))
}

fn main() -> ftsqa::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(5);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(50);

    let rows = [
        (Variant::Fts, OutputMode::Affine),
        (Variant::Shared, OutputMode::Affine),
        (Variant::Shared, OutputMode::Concat),
    ];
    println!("{:<12} {:<8} {:<10} {:>8} {:>8}", "variant", "output", "loss", "innerp", "lr");
    for (variant, mode) in rows {
        for loss in [LossKind::Pooling, LossKind::FullTime] {
            let (mut ip, mut lr) = (0.0, 0.0);
            for seed in 0..seeds {
                let (a, b) = accuracy(variant, mode, loss, 7 + seed, epochs)?;
                ip += a;
                lr += b;
            }
            let n = seeds as f64;
            println!(
                "{:<12} {:<8} {:<10} {:>8.3} {:>8.3}",
                format!("{variant:?}"),
                format!("{mode:?}"),
                format!("{loss:?}"),
                ip / n,
                lr / n
            );
        }
    }
    Ok(())
}
