//! A single GRU unrolled by hand, then the bidirectional question encoder and both answer
//! encoders on a tiny vocabulary.

use ftsqa::data::{UnkPolicy, Vocabulary};
use ftsqa::gru::{gru_forward, gru_step, GruParams};
use ftsqa::infer::average_pool;
use ftsqa::model::{fit_length, Embeddings};
use ftsqa::{FtsModel, ModelConfig, OutputMode, Tensor, Variant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn show(label: &str, t: &Tensor) {
    let v: Vec<String> = t.as_slice().iter().map(|x| format!("{x:+.3}")).collect();
    println!("{label:<14} [{}]", v.join(" "));
}

fn main() -> ftsqa::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = GruParams::init(2, 3, &mut rng);
    let xs = [Tensor::from_vec(vec![1.0, 0.0]), Tensor::from_vec(vec![0.0, 1.0])];
    let (h1, _) = gru_step(&p, &xs[0], &p.h0)?;
    let (h2, _) = gru_step(&p, &xs[1], &h1)?;
    let (hs, _) = gru_forward(&p, &xs)?;
    show("h0", &p.h0);
    show("step 1", &h1);
    show("step 2", &h2);
    println!("unrolled matches stepped: {}", hs[1] == h2);

    let tokens = "<unk> <pad> who wrote the raven edgar allan poe".split(' ').map(String::from).collect();
    let vocab = Vocabulary::from_tokens(tokens, UnkPolicy::TrainableUnk)?;
    let question: Vec<usize> = ["who", "wrote", "the", "raven"].iter().map(|t| vocab.lookup(t)).collect();
    let answer: Vec<usize> = ["edgar", "allan", "poe"].iter().map(|t| vocab.lookup(t)).collect();

    for (variant, mode) in [(Variant::Fts, OutputMode::Affine), (Variant::Shared, OutputMode::Concat)] {
        let emb = Embeddings::build(&vocab, None, 4, false, &mut rng)?;
        let seq_len = (variant == Variant::Shared).then_some(5);
        let config = ModelConfig { variant, output_mode: mode, hidden_dim: 3, seq_len };
        let model = FtsModel::new(config, emb, &mut rng)?;
        println!("\n{variant:?}/{mode:?}, representation size {}", model.rep_dim());

        let q = fit_length(&question, model.question_len(question.len()));
        println!("question ids {q:?}");
        let enc = model.encode_question(&q, None)?;
        for (t, o) in enc.outputs.iter().enumerate() {
            show(&format!("output {t}"), o);
        }
        show("pooled", &average_pool(&enc.outputs)?);

        let a = match variant {
            Variant::Fts => model.encode_answer(&answer)?,
            Variant::Shared => model.encode_answer_shared(&answer, enc.len())?,
        };
        show("answer pooled", &average_pool(&a.reps)?);
    }
    Ok(())
}
