//! Train briefly, write the model in both payload precisions and check what survives a
//! reload.

use ftsqa::cli::{load_checkpoint, prepare_splits, save_checkpoint_as, train_run, Precision, RunConfig};
use ftsqa::data::{generate_synthetic, split_dataset, UnkPolicy};
use ftsqa::infer::{predict_all, EvalMethod};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = generate_synthetic(10, 12, 3, 8, 3);
    let (train, valid, test) = split_dataset(&data, 3);
    let prepared = prepare_splits(train, valid, test, None, UnkPolicy::TrainableUnk);
    let mut cfg = RunConfig {
        hidden_dim: 12,
        embedding_dim: 12,
        ..RunConfig::default()
    };
    cfg.hyper.epochs = 15;
    cfg.hyper.dropout_rate = 0.3;
    let trained = train_run(&cfg, &prepared, None)?.best;

    let dir = tempfile::tempdir()?;
    for precision in [Precision::F32, Precision::F64] {
        let path = dir.path().join(format!("{precision:?}.ckpt"));
        save_checkpoint_as(&path, &trained, precision)?;
        let size = std::fs::metadata(&path)?.len();
        let back = load_checkpoint(&path)?;

        let max_diff = trained
            .model
            .named()
            .iter()
            .zip(back.model.named())
            .flat_map(|((_, a), (_, b))| a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        let before = predict_all(&trained.model, &prepared.test, EvalMethod::InnerProduct, None)?;
        let after = predict_all(&back.model, &prepared.test, EvalMethod::InnerProduct, None)?;
        let flips = before.iter().zip(&after).filter(|(a, b)| a.predicted != b.predicted).count();
        println!(
            "{precision:?}: {size} bytes, max parameter change {max_diff:.1e}, {flips}/{} predictions changed, lr head kept: {}",
            before.len(),
            back.lr_head.is_some()
        );
    }
    Ok(())
}
