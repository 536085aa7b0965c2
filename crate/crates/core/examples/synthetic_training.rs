//! Train the separate-answer-encoder model on a generated dataset and report test
//! accuracy with both answer-selection methods.
//!
//! ```text
//! cargo run --release --example synthetic_training [epochs] [seed]
//! ```

use ftsqa::data::{encode, generate_synthetic, split_dataset, UnkPolicy, Vocabulary};
use ftsqa::infer::{evaluate, fit_lr_head, EvalMethod, LrConfig};
use ftsqa::model::Embeddings;
use ftsqa::optim::{train_epoch, HyperParams, OptimizerState};
use ftsqa::{FtsModel, ModelConfig, OutputMode, Variant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ftsqa::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(50);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(7);

    let data = generate_synthetic(20, 15, 3, 12, seed);
    let (train, valid, test) = split_dataset(&data, seed);
    let vocab = Vocabulary::build(&[&train], None, UnkPolicy::TrainableUnk);
    let (train, valid, test) = (encode(&train, &vocab), encode(&valid, &vocab), encode(&test, &vocab));
    println!(
        "{} answers, {} train / {} valid / {} test questions, vocabulary {}",
        train.answers.len(),
        train.len(),
        valid.len(),
        test.len(),
        vocab.len()
    );

    let hp = HyperParams {
        learning_rate: 0.002,
        momentum: 0.8,
        dropout_rate: 0.3,
        batch_size: 16,
        epochs,
        seed,
        ..HyperParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let embeddings = Embeddings::build(&vocab, None, 16, false, &mut rng)?;
    let config = ModelConfig {
        variant: Variant::Fts,
        output_mode: OutputMode::Affine,
        hidden_dim: 16,
        seq_len: None,
    };
    let mut model = FtsModel::new(config, embeddings, &mut rng)?;
    let mut state = OptimizerState::default();

    for epoch in 1..=hp.epochs {
        let stats = train_epoch(&mut model, &train, &hp, &mut state, &mut rng)?;
        if epoch % 5 == 0 || epoch == 1 {
            let val = evaluate(&model, &valid, EvalMethod::InnerProduct, None)?;
            println!("epoch {epoch:3}  loss {:9.4}  valid innerp {:.3}", stats.mean_loss, val);
        }
    }

    let lr = fit_lr_head(&model, &train, &LrConfig::default())?;
    println!("test innerp {:.3}", evaluate(&model, &test, EvalMethod::InnerProduct, None)?);
    println!("test lr     {:.3}", evaluate(&model, &test, EvalMethod::Lr, Some(&lr))?);
    Ok(())
}
