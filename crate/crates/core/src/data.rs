//! Embedding files, question/answer datasets, vocabularies and the per-answer split.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_ID: usize = 0;
pub const PAD_ID: usize = 1;

/// Pretrained word vectors keyed by token.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub entries: HashMap<String, Vec<f64>>,
    /// Lines dropped for wrong arity, unparsable numbers or duplicate tokens.
    pub skipped: usize,
}

impl EmbeddingTable {
    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.entries.get(token).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Read a GloVe-style text file: `token v1 v2 ... v_dim` per line.
pub fn load_embeddings(path: impl AsRef<Path>, dim: usize) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = HashMap::new();
    let mut skipped = 0;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().unwrap_or_default();
        let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        match values {
            Ok(values) if values.len() == dim && values.iter().all(|v| v.is_finite()) => {
                if entries.contains_key(token) {
                    log::warn!("{}:{}: duplicate token `{token}` skipped", path.display(), lineno + 1);
                    skipped += 1;
                } else {
                    entries.insert(token.to_string(), values);
                }
            }
            Ok(values) => {
                log::warn!(
                    "{}:{}: expected {dim} values, found {}; line skipped",
                    path.display(),
                    lineno + 1,
                    values.len()
                );
                skipped += 1;
            }
            Err(e) => {
                log::warn!("{}:{}: {e}; line skipped", path.display(), lineno + 1);
                skipped += 1;
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("no usable {dim}-dimensional embedding lines"),
        });
    }
    Ok(EmbeddingTable {
        dim,
        entries,
        skipped,
    })
}

/// Lowercase, split on whitespace, trim non-alphanumeric characters from both ends of
/// each piece and drop what becomes empty.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Validation,
    Test,
    Unsplit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Question {
    pub sentences: Vec<String>,
    /// All sentences concatenated into one token sequence.
    pub tokens: Vec<String>,
    /// Filled by [`encode`].
    pub token_ids: Vec<usize>,
    pub answer_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub id: usize,
    pub phrase: String,
    pub tokens: Vec<String>,
    pub token_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnswerSet {
    pub answers: Vec<Answer>,
}

impl AnswerSet {
    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&Answer> {
        self.answers.get(id)
    }

    pub fn phrase(&self, id: usize) -> &str {
        &self.answers[id].phrase
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub questions: Vec<Question>,
    pub answers: AnswerSet,
    pub split: SplitTag,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    question: Vec<String>,
    answer: String,
}

impl Dataset {
    /// Build a dataset from `(sentences, answer phrase)` pairs. Answer ids follow first
    /// appearance. Records whose question or answer has no tokens are dropped with a
    /// warning.
    pub fn from_records<I>(records: I) -> Dataset
    where
        I: IntoIterator<Item = (Vec<String>, String)>,
    {
        let mut answers = AnswerSet::default();
        let mut by_phrase: HashMap<String, usize> = HashMap::new();
        let mut questions = Vec::new();
        for (i, (sentences, phrase)) in records.into_iter().enumerate() {
            let tokens: Vec<String> = sentences.iter().flat_map(|s| tokenize(s)).collect();
            let answer_tokens = tokenize(&phrase);
            if tokens.is_empty() || answer_tokens.is_empty() {
                log::warn!("record {} has an empty question or answer after tokenization; rejected", i + 1);
                continue;
            }
            let answer_id = *by_phrase.entry(phrase.clone()).or_insert_with(|| {
                answers.answers.push(Answer {
                    id: answers.answers.len(),
                    phrase,
                    tokens: answer_tokens,
                    token_ids: Vec::new(),
                });
                answers.answers.len() - 1
            });
            questions.push(Question {
                sentences,
                tokens,
                token_ids: Vec::new(),
                answer_id,
            });
        }
        Dataset {
            questions,
            answers,
            split: SplitTag::Unsplit,
        }
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn answer_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.answers.len()];
        for q in &self.questions {
            counts[q.answer_id] += 1;
        }
        counts
    }

    fn records(&self) -> impl Iterator<Item = (Vec<String>, String)> + '_ {
        self.questions
            .iter()
            .map(|q| (q.sentences.clone(), self.answers.phrase(q.answer_id).to_string()))
    }
}

/// Load a JSON-Lines dataset of `{"question": [sentences], "answer": phrase}` records.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        records.push((rec.question, rec.answer));
    }
    Ok(Dataset::from_records(records))
}

pub fn save_dataset(path: impl AsRef<Path>, d: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (question, answer) in d.records() {
        let line = serde_json::to_string(&Record { question, answer }).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn split_path(prefix: &Path, suffix: &str) -> std::path::PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

/// Write `<prefix>.train`, `<prefix>.valid` and `<prefix>.test`.
pub fn save_split(prefix: impl AsRef<Path>, train: &Dataset, valid: &Dataset, test: &Dataset) -> Result<()> {
    let prefix = prefix.as_ref();
    save_dataset(split_path(prefix, ".train"), train)?;
    save_dataset(split_path(prefix, ".valid"), valid)?;
    save_dataset(split_path(prefix, ".test"), test)
}

pub fn split_exists(prefix: impl AsRef<Path>) -> bool {
    let prefix = prefix.as_ref();
    [".train", ".valid", ".test"]
        .iter()
        .all(|s| split_path(prefix, s).is_file())
}

/// Load the three split files with one answer set shared across them.
pub fn load_split(prefix: impl AsRef<Path>) -> Result<(Dataset, Dataset, Dataset)> {
    let prefix = prefix.as_ref();
    let parts = [
        (load_dataset(split_path(prefix, ".train"))?, SplitTag::Train),
        (load_dataset(split_path(prefix, ".valid"))?, SplitTag::Validation),
        (load_dataset(split_path(prefix, ".test"))?, SplitTag::Test),
    ];
    let sizes: Vec<usize> = parts.iter().map(|(d, _)| d.len()).collect();
    let merged = Dataset::from_records(parts.iter().flat_map(|(d, _)| d.records()).collect::<Vec<_>>());
    let mut it = merged.questions.into_iter();
    let mut out = parts.iter().zip(sizes).map(|((_, tag), n)| Dataset {
        questions: it.by_ref().take(n).collect(),
        answers: merged.answers.clone(),
        split: *tag,
    });
    Ok((out.next().unwrap(), out.next().unwrap(), out.next().unwrap()))
}

/// Keep questions whose answer occurs at least `min_count` times; answer ids are
/// re-densified in their original order.
pub fn filter_min_answer_count(d: &Dataset, min_count: usize) -> Result<Dataset> {
    assert!(min_count >= 1, "min_count must be at least 1");
    let counts = d.answer_counts();
    let mut remap = vec![None; d.answers.len()];
    let mut answers = AnswerSet::default();
    for a in &d.answers.answers {
        if counts[a.id] >= min_count {
            remap[a.id] = Some(answers.answers.len());
            answers.answers.push(Answer {
                id: answers.answers.len(),
                ..a.clone()
            });
        }
    }
    let questions: Vec<Question> = d
        .questions
        .iter()
        .filter_map(|q| {
            remap[q.answer_id].map(|id| Question {
                answer_id: id,
                ..q.clone()
            })
        })
        .collect();
    if questions.is_empty() {
        return Err(Error::EmptyDataset("answer-count filtering"));
    }
    Ok(Dataset {
        questions,
        answers,
        split: d.split,
    })
}

/// Per answer class: shuffle with a seeded RNG, send `⌊0.2n⌋` to test, `⌊0.2n⌋` to
/// validation and the rest to train. All three keep the full answer set and the original
/// question order.
pub fn split_dataset(d: &Dataset, seed: u64) -> (Dataset, Dataset, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); d.answers.len()];
    for (i, q) in d.questions.iter().enumerate() {
        by_class[q.answer_id].push(i);
    }
    let mut tags = vec![SplitTag::Train; d.questions.len()];
    for members in &mut by_class {
        members.shuffle(&mut rng);
        let fifth = members.len() / 5;
        for &i in &members[..fifth] {
            tags[i] = SplitTag::Test;
        }
        for &i in &members[fifth..2 * fifth] {
            tags[i] = SplitTag::Validation;
        }
    }
    let pick = |tag: SplitTag| Dataset {
        questions: d
            .questions
            .iter()
            .zip(&tags)
            .filter(|(_, t)| **t == tag)
            .map(|(q, _)| q.clone())
            .collect(),
        answers: d.answers.clone(),
        split: tag,
    };
    (pick(SplitTag::Train), pick(SplitTag::Validation), pick(SplitTag::Test))
}

/// What out-of-vocabulary question tokens turn into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnkPolicy {
    /// One shared UNK row, randomly initialized and trained.
    TrainableUnk,
    /// One shared UNK row fixed at zero.
    ZeroFrozen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    pub unk_policy: UnkPolicy,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>, unk_policy: UnkPolicy) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNK_TOKEN) || tokens.get(1).map(String::as_str) != Some(PAD_TOKEN) {
            return Err(Error::Model("vocabulary must start with <unk>, <pad>".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Model(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocabulary {
            tokens,
            index,
            unk_policy,
        })
    }

    /// Collect tokens in first-appearance order. With pretrained embeddings, question
    /// tokens missing from the table fall back to UNK; answer tokens always get a row.
    pub fn build(datasets: &[&Dataset], pretrained: Option<&EmbeddingTable>, unk_policy: UnkPolicy) -> Self {
        let mut tokens = vec![UNK_TOKEN.to_string(), PAD_TOKEN.to_string()];
        let mut index: HashMap<String, usize> = tokens.iter().cloned().zip(0..).collect();
        let mut add = |tok: &String| {
            if !index.contains_key(tok) {
                index.insert(tok.clone(), tokens.len());
                tokens.push(tok.clone());
            }
        };
        for d in datasets {
            for q in &d.questions {
                for tok in &q.tokens {
                    if pretrained.is_none_or(|t| t.entries.contains_key(tok)) {
                        add(tok);
                    }
                }
            }
            for a in &d.answers.answers {
                a.tokens.iter().for_each(&mut add);
            }
        }
        Vocabulary {
            tokens,
            index,
            unk_policy,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i)).collect()
    }
}

/// Map every question and answer token to its vocabulary id (UNK when absent).
pub fn encode(d: &Dataset, vocab: &Vocabulary) -> Dataset {
    let ids = |toks: &[String]| toks.iter().map(|t| vocab.lookup(t)).collect::<Vec<_>>();
    let mut out = d.clone();
    for q in &mut out.questions {
        q.token_ids = ids(&q.tokens);
    }
    for a in &mut out.answers.answers {
        a.token_ids = ids(&a.tokens);
    }
    out
}

/// Desk-scale synthetic benchmark.
///
/// Answer class `k` owns `signature_len` tokens `sig_k_j` and the answer phrase `ans_k`.
/// Each question is its class's signature tokens shuffled together with `noise_len`
/// tokens drawn with replacement from a shared pool of `noise_NN` tokens (pool size
/// `max(noise_len, n_answers · signature_len)`).
pub fn generate_synthetic(
    n_answers: usize,
    q_per_answer: usize,
    signature_len: usize,
    noise_len: usize,
    seed: u64,
) -> Dataset {
    assert!(n_answers >= 1 && q_per_answer >= 1 && signature_len >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = noise_len.max(n_answers * signature_len);
    let mut records = Vec::with_capacity(n_answers * q_per_answer);
    for k in 0..n_answers {
        for _ in 0..q_per_answer {
            let mut words: Vec<String> = (0..signature_len).map(|j| format!("sig_{k}_{j}")).collect();
            words.extend((0..noise_len).map(|_| format!("noise_{}", rng.gen_range(0..pool))));
            words.shuffle(&mut rng);
            records.push((vec![words.join(" ")], format!("ans_{k}")));
        }
    }
    Dataset::from_records(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("China"), vec!["china"]);
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("the Monkey King's travels."),
            vec!["the", "monkey", "king's", "travels"]
        );
        assert_eq!(tokenize(" -- \"Four  Classical\" "), vec!["four", "classical"]);
    }

    #[test]
    fn embeddings_parse_and_skip() {
        let f = temp_file("the 0.1 0.2\nbad 1.0\nof 0.5 x\nthe 9 9\nand -1 2e-1\n");
        let t = load_embeddings(f.path(), 2).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("the").unwrap(), &[0.1, 0.2]);
        assert_eq!(t.get("and").unwrap(), &[-1.0, 0.2]);
        assert_eq!(t.skipped, 3);
    }

    #[test]
    fn embeddings_hundred_dim_line() {
        let vals: Vec<String> = (0..100).map(|i| format!("{}", i as f64 / 100.0)).collect();
        let f = temp_file(&format!("word {}\n", vals.join(" ")));
        let t = load_embeddings(f.path(), 100).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.dim, 100);
        assert_eq!(t.get("word").unwrap()[37], 0.37);
    }

    #[test]
    fn embeddings_errors() {
        let f = temp_file("");
        assert!(matches!(load_embeddings(f.path(), 2), Err(Error::Format { .. })));
        assert!(matches!(
            load_embeddings("/nonexistent/glove.txt", 2),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn dataset_loading() {
        let f = temp_file(
            "{\"question\": [\"Name this country.\", \"It has pandas.\"], \"answer\": \"china\", \"extra\": 1}\n\
             \n\
             {\"question\": [\"Its capital is Beijing.\"], \"answer\": \"china\"}\n\
             {\"question\": [\"...\"], \"answer\": \"peru\"}\n",
        );
        let d = load_dataset(f.path()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.answers.len(), 1);
        assert_eq!(d.questions[0].tokens, vec!["name", "this", "country", "it", "has", "pandas"]);
        assert_eq!(d.questions[1].answer_id, 0);
    }

    #[test]
    fn dataset_single_record() {
        let f = temp_file("{\"question\": [\"a b\"], \"answer\": \"china\"}\n");
        let d = load_dataset(f.path()).unwrap();
        assert_eq!((d.len(), d.answers.len()), (1, 1));
    }

    #[test]
    fn dataset_parse_error_has_line_number() {
        let f = temp_file("{\"question\": [\"a\"], \"answer\": \"x\"}\n{\"question\": 3}\n");
        match load_dataset(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    fn counts_dataset(counts: &[usize]) -> Dataset {
        let mut recs = Vec::new();
        for (k, &n) in counts.iter().enumerate() {
            for i in 0..n {
                recs.push((vec![format!("q{k} w{i}")], format!("a{k}")));
            }
        }
        Dataset::from_records(recs)
    }

    #[test]
    fn min_count_filter() {
        let d = counts_dataset(&[6, 5, 7]);
        assert_eq!(filter_min_answer_count(&d, 1).unwrap(), d);
        let f = filter_min_answer_count(&d, 6).unwrap();
        assert_eq!(f.answers.len(), 2);
        assert_eq!(f.answers.phrase(1), "a2");
        assert_eq!(f.len(), 13);
        assert!(f.questions.iter().all(|q| q.answer_id < 2));
        assert!(matches!(filter_min_answer_count(&d, 8), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn split_sizes_per_class() {
        let d = counts_dataset(&[5, 1, 12]);
        let (train, valid, test) = split_dataset(&d, 3);
        let per = |d: &Dataset| d.answer_counts();
        assert_eq!(per(&test), vec![1, 0, 2]);
        assert_eq!(per(&valid), vec![1, 0, 2]);
        assert_eq!(per(&train), vec![3, 1, 8]);
        assert_eq!(train.split, SplitTag::Train);
    }

    #[test]
    fn split_roundtrips_through_files() {
        let d = counts_dataset(&[5, 6, 10]);
        let (train, valid, test) = split_dataset(&d, 9);
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("data.jsonl");
        save_split(&prefix, &train, &valid, &test).unwrap();
        assert!(split_exists(&prefix));
        let (t2, v2, s2) = load_split(&prefix).unwrap();
        assert_eq!(t2.len(), train.len());
        assert_eq!(v2.len(), valid.len());
        assert_eq!(s2.len(), test.len());
        assert_eq!(t2.answers, v2.answers);
        for (a, b) in s2.questions.iter().zip(&test.questions) {
            assert_eq!(a.tokens, b.tokens);
            assert_eq!(s2.answers.phrase(a.answer_id), test.answers.phrase(b.answer_id));
        }
    }

    #[test]
    fn vocabulary_and_encoding() {
        let d = Dataset::from_records(vec![
            (vec!["The cat sat".to_string()], "Felix".to_string()),
            (vec!["a dog".to_string()], "rex".to_string()),
        ]);
        let v = Vocabulary::build(&[&d], None, UnkPolicy::TrainableUnk);
        assert_eq!(v.len(), 2 + 3 + 1 + 2 + 1);
        let e = encode(&d, &v);
        assert_eq!(e.questions[0].token_ids, vec![2, 3, 4]);
        assert_eq!(e.answers.answers[0].token_ids, vec![7]);
        assert_eq!(v.decode(&e.questions[1].token_ids), vec!["a", "dog"]);

        let mut table = EmbeddingTable {
            dim: 1,
            entries: HashMap::new(),
            skipped: 0,
        };
        table.entries.insert("cat".into(), vec![0.0]);
        let v = Vocabulary::build(&[&d], Some(&table), UnkPolicy::TrainableUnk);
        let e = encode(&d, &v);
        assert_eq!(e.questions[0].token_ids, vec![UNK_ID, 2, UNK_ID]);
        assert_eq!(v.token(e.answers.answers[1].token_ids[0]), "rex");
    }

    #[test]
    fn vocabulary_from_tokens_validates() {
        let ok = Vocabulary::from_tokens(
            vec![UNK_TOKEN.into(), PAD_TOKEN.into(), "x".into()],
            UnkPolicy::ZeroFrozen,
        )
        .unwrap();
        assert_eq!(ok.lookup("x"), 2);
        assert_eq!(ok.lookup("y"), UNK_ID);
        assert!(Vocabulary::from_tokens(vec!["x".into()], UnkPolicy::ZeroFrozen).is_err());
    }

    #[test]
    fn synthetic_examples() {
        let d = generate_synthetic(1, 4, 2, 3, 1);
        assert_eq!(d.answers.len(), 1);
        assert!(d.questions.iter().all(|q| q.answer_id == 0 && q.tokens.len() == 5));

        let d = generate_synthetic(3, 2, 4, 0, 1);
        assert!(d.questions.iter().all(|q| q.tokens.iter().all(|t| t.starts_with("sig_"))));

        let d = generate_synthetic(20, 15, 3, 12, 7);
        assert_eq!(d.len(), 300);
        assert_eq!(d.answers.len(), 20);
        assert_eq!(d.answers.phrase(4), "ans_4");
        let v = Vocabulary::build(&[&d], None, UnkPolicy::TrainableUnk);
        assert!(v.len() >= 20 * 3 + 20);
        assert_eq!(d, generate_synthetic(20, 15, 3, 12, 7));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(100))]

            #[test]
            fn split_is_deterministic_partition(
                counts in proptest::collection::vec(1usize..14, 1..8),
                seed in any::<u64>(),
            ) {
                let d = counts_dataset(&counts);
                let (a, b, c) = split_dataset(&d, seed);
                let (a2, b2, c2) = split_dataset(&d, seed);
                prop_assert_eq!(&a, &a2);
                prop_assert_eq!(&b, &b2);
                prop_assert_eq!(&c, &c2);
                let mut all: Vec<_> = a.questions.iter().chain(&b.questions).chain(&c.questions)
                    .map(|q| q.sentences[0].clone()).collect();
                all.sort();
                let mut orig: Vec<_> = d.questions.iter().map(|q| q.sentences[0].clone()).collect();
                orig.sort();
                prop_assert_eq!(all, orig);
                for (k, &n) in counts.iter().enumerate() {
                    prop_assert_eq!(c.answer_counts()[k], n / 5);
                    prop_assert_eq!(b.answer_counts()[k], n / 5);
                    prop_assert!(a.answer_counts()[k] >= 1);
                }
            }

            #[test]
            fn filter_leaves_no_small_class(
                counts in proptest::collection::vec(1usize..10, 1..8),
                m in 1usize..6,
            ) {
                let d = counts_dataset(&counts);
                match filter_min_answer_count(&d, m) {
                    Ok(f) => prop_assert!(f.answer_counts().iter().all(|&n| n >= m)),
                    Err(_) => prop_assert!(counts.iter().all(|&n| n < m)),
                }
            }

            #[test]
            fn encode_decode_roundtrip(seed in any::<u64>()) {
                let d = generate_synthetic(3, 2, 2, 4, seed);
                let v = Vocabulary::build(&[&d], None, UnkPolicy::TrainableUnk);
                let e = encode(&d, &v);
                for q in &e.questions {
                    let back: Vec<String> = v.decode(&q.token_ids).into_iter().map(String::from).collect();
                    prop_assert_eq!(&back, &q.tokens);
                }
            }
        }
    }
}
