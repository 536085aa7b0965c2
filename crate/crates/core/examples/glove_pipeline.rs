//! Load a JSONL question file and a GloVe-format vector file, filter rare answers, split,
//! and build a vocabulary with pretrained rows. With no arguments a small corpus is
//! written to a temporary directory first.
//!
//! ```text
//! cargo run --example glove_pipeline [questions.jsonl vectors.txt dim]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use ftsqa::data::{
    encode, filter_min_answer_count, load_dataset, load_embeddings, split_dataset, UnkPolicy, Vocabulary,
};
use ftsqa::model::Embeddings;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn write_demo(dir: &Path) -> std::io::Result<(PathBuf, PathBuf)> {
    let topics = [("mitochondria", "organelle energy cell"), ("photosynthesis", "light leaf sugar"), ("osmosis", "water membrane flow")];
    let mut lines = Vec::new();
    for (answer, words) in topics {
        for i in 0..7 {
            let q = serde_json::json!({
                "question": [format!("this process involves {words} in case {i}."), "name this concept.".to_string()],
                "answer": answer,
            });
            lines.push(q.to_string());
        }
    }
    lines.push(r#"{"question": ["a rare clue."], "answer": "ribosome"}"#.into());
    let questions = dir.join("bio.jsonl");
    fs::write(&questions, lines.join("\n"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut glove = String::new();
    for w in "this process involves in case name concept light leaf water mitochondria".split(' ') {
        let v: Vec<String> = (0..6).map(|_| format!("{:.3}", rand::Rng::gen_range(&mut rng, -1.0..1.0))).collect();
        glove += &format!("{w} {}\n", v.join(" "));
    }
    glove += "broken 0.1 0.2\n";
    let vectors = dir.join("vectors.txt");
    fs::write(&vectors, glove)?;
    Ok((questions, vectors))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let tmp = tempfile::tempdir()?;
    let (questions, vectors, dim) = match args.as_slice() {
        [q, v, d] => (PathBuf::from(q), PathBuf::from(v), d.parse().unwrap_or(300)),
        _ => {
            let (q, v) = write_demo(tmp.path())?;
            (q, v, 6)
        }
    };

    let data = load_dataset(&questions)?;
    let table = load_embeddings(&vectors, dim)?;
    println!("{} questions, {} answers; {} vectors ({} lines skipped)", data.len(), data.answers.len(), table.len(), table.skipped);

    let kept = filter_min_answer_count(&data, 6)?;
    println!("{} questions after dropping answers seen fewer than 6 times", kept.len());

    let (train, valid, test) = split_dataset(&kept, 1);
    println!("split: {} train, {} valid, {} test", train.len(), valid.len(), test.len());

    let vocab = Vocabulary::build(&[&train, &valid, &test], Some(&table), UnkPolicy::TrainableUnk);
    let covered = vocab.tokens().iter().filter(|t| table.get(t).is_some()).count();
    println!("vocabulary {} tokens, {covered} with pretrained vectors", vocab.len());

    let train = encode(&train, &vocab);
    let first = &train.questions[0];
    println!("first question: {:?} -> {:?}", first.tokens, first.token_ids);

    let emb = Embeddings::build(&vocab, Some(&table), dim, false, &mut ChaCha8Rng::seed_from_u64(1))?;
    println!("embedding matrix {} x {}", emb.vocab_size(), emb.dim());
    Ok(())
}
