//! Command-line workflows: configuration, checkpoints, training runs and reports.
//!
//! Configuration comes from built-in defaults, then an optional flat `key = value` file,
//! then command-line flags. Keys may use `-` or `_` interchangeably.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{
    encode, filter_min_answer_count, generate_synthetic, load_dataset, load_embeddings, load_split, save_dataset,
    save_split, split_dataset, split_exists, AnswerSet, Dataset, EmbeddingTable, Question, UnkPolicy, Vocabulary,
};
use crate::error::{Error, Result};
use crate::infer::{evaluate, fit_lr_head, predict_all, EvalMethod, LrConfig, LrModel};
use crate::loss::WrongAnswerPolicy;
use crate::model::{Embeddings, FtsModel, ModelConfig, OutputMode, Variant};
use crate::numeric::Tensor;
use crate::optim::{gradient_check, random_instance, train_epoch, DropoutConvention, HyperParams, OptimizerState};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"FTSB1\n";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Parameters of the `synth` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub answers: usize,
    pub questions_per_answer: usize,
    pub signature_len: usize,
    pub noise_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            answers: 20,
            questions_per_answer: 15,
            signature_len: 3,
            noise_len: 12,
        }
    }
}

/// Every setting of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub variant: Variant,
    pub output_mode: OutputMode,
    /// Shared encoder only; derived from the longest training question when unset.
    pub seq_len: Option<usize>,
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    pub unk_policy: UnkPolicy,
    pub eval_method: EvalMethod,
    pub min_answer_count: usize,
    pub hyper: HyperParams,
    pub lr_head: LrConfig,
    pub synth: SynthConfig,
    pub gradcheck_instances: usize,
    pub gradcheck_tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            embeddings: None,
            checkpoint: None,
            out: None,
            variant: Variant::Fts,
            output_mode: OutputMode::Affine,
            seq_len: None,
            hidden_dim: 100,
            embedding_dim: 100,
            unk_policy: UnkPolicy::TrainableUnk,
            eval_method: EvalMethod::InnerProduct,
            min_answer_count: 6,
            hyper: HyperParams::default(),
            lr_head: LrConfig::default(),
            synth: SynthConfig::default(),
            gradcheck_instances: 10,
            gradcheck_tolerance: 1e-5,
        }
    }
}

/// Config keys in the order they are echoed.
pub const CONFIG_KEYS: &[&str] = &[
    "dataset",
    "embeddings",
    "checkpoint",
    "out",
    "variant",
    "output-mode",
    "loss",
    "seq-len",
    "hidden-dim",
    "embedding-dim",
    "unk-policy",
    "train-embeddings",
    "eval-method",
    "min-answer-count",
    "lr",
    "momentum",
    "rms-decay",
    "epsilon",
    "dropout",
    "dropout-convention",
    "epochs",
    "batch-size",
    "seed",
    "margin",
    "wrong-answers",
    "batch-mean",
    "clip-norm",
    "lr-head-l2",
    "lr-head-iterations",
    "lr-head-tolerance",
    "synth-answers",
    "synth-questions",
    "synth-signature",
    "synth-noise",
    "gradcheck-instances",
    "gradcheck-tolerance",
];

fn normalize_key(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('_', "-")
}

fn config_err(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| config_err(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_opt<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    match value {
        "" | "none" => Ok(None),
        v => parse_num(key, v).map(Some),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(config_err(key, format!("expected true or false, got `{value}`"))),
    }
}

fn parse_enum<T: DeserializeOwned>(key: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| config_err(key, format!("unknown value `{value}`")))
}

fn enum_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => panic!("unit enum expected, got {other:?}"),
    }
}

fn parse_path(value: &str) -> Option<PathBuf> {
    match value {
        "" | "none" => None,
        v => Some(PathBuf::from(v)),
    }
}

fn show_opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(|| "none".to_string(), |p| p.display().to_string())
}

/// Parse `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| config_err(&format!("line {}", i + 1), "expected `key = value`"))?;
        pairs.push((normalize_key(k), v.trim().to_string()));
    }
    Ok(pairs)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = normalize_key(key);
        let k = key.as_str();
        let value = value.trim();
        let hp = &mut self.hyper;
        match k {
            "dataset" => self.dataset = parse_path(value),
            "embeddings" => self.embeddings = parse_path(value),
            "checkpoint" => self.checkpoint = parse_path(value),
            "out" => self.out = parse_path(value),
            "variant" => self.variant = parse_enum(k, value)?,
            "output-mode" => self.output_mode = parse_enum(k, value)?,
            "loss" => hp.loss_kind = parse_enum(k, value)?,
            "seq-len" => self.seq_len = parse_opt(k, value)?,
            "hidden-dim" => self.hidden_dim = parse_num(k, value)?,
            "embedding-dim" => self.embedding_dim = parse_num(k, value)?,
            "unk-policy" => self.unk_policy = parse_enum(k, value)?,
            "train-embeddings" => hp.train_embeddings = parse_bool(k, value)?,
            "eval-method" => self.eval_method = parse_enum(k, value)?,
            "min-answer-count" => self.min_answer_count = parse_num(k, value)?,
            "lr" => hp.learning_rate = parse_num(k, value)?,
            "momentum" => hp.momentum = parse_num(k, value)?,
            "rms-decay" => hp.rms_decay = parse_num(k, value)?,
            "epsilon" => hp.epsilon = parse_num(k, value)?,
            "dropout" => hp.dropout_rate = parse_num(k, value)?,
            "dropout-convention" => hp.dropout_convention = parse_enum::<DropoutConvention>(k, value)?,
            "epochs" => hp.epochs = parse_num(k, value)?,
            "batch-size" => hp.batch_size = parse_num(k, value)?,
            "seed" => hp.seed = parse_num(k, value)?,
            "margin" => hp.margin = parse_num(k, value)?,
            "wrong-answers" => {
                hp.wrong_answers = match value.split_once(':') {
                    None if value == "all" => WrongAnswerPolicy::All,
                    Some(("sample", n)) => WrongAnswerPolicy::Sample(parse_num(k, n)?),
                    _ => return Err(config_err(k, format!("expected `all` or `sample:K`, got `{value}`"))),
                }
            }
            "batch-mean" => hp.batch_mean = parse_bool(k, value)?,
            "clip-norm" => hp.clip_norm = parse_opt(k, value)?,
            "lr-head-l2" => self.lr_head.l2 = parse_num(k, value)?,
            "lr-head-iterations" => self.lr_head.iterations = parse_num(k, value)?,
            "lr-head-tolerance" => self.lr_head.tolerance = parse_num(k, value)?,
            "synth-answers" => self.synth.answers = parse_num(k, value)?,
            "synth-questions" => self.synth.questions_per_answer = parse_num(k, value)?,
            "synth-signature" => self.synth.signature_len = parse_num(k, value)?,
            "synth-noise" => self.synth.noise_len = parse_num(k, value)?,
            "gradcheck-instances" => self.gradcheck_instances = parse_num(k, value)?,
            "gradcheck-tolerance" => self.gradcheck_tolerance = parse_num(k, value)?,
            _ => return Err(config_err(k, "unknown config key")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        let hp = &self.hyper;
        let key = normalize_key(key);
        Ok(match key.as_str() {
            "dataset" => show_path(&self.dataset),
            "embeddings" => show_path(&self.embeddings),
            "checkpoint" => show_path(&self.checkpoint),
            "out" => show_path(&self.out),
            "variant" => enum_name(&self.variant),
            "output-mode" => enum_name(&self.output_mode),
            "loss" => enum_name(&hp.loss_kind),
            "seq-len" => show_opt(&self.seq_len),
            "hidden-dim" => self.hidden_dim.to_string(),
            "embedding-dim" => self.embedding_dim.to_string(),
            "unk-policy" => enum_name(&self.unk_policy),
            "train-embeddings" => hp.train_embeddings.to_string(),
            "eval-method" => enum_name(&self.eval_method),
            "min-answer-count" => self.min_answer_count.to_string(),
            "lr" => hp.learning_rate.to_string(),
            "momentum" => hp.momentum.to_string(),
            "rms-decay" => hp.rms_decay.to_string(),
            "epsilon" => hp.epsilon.to_string(),
            "dropout" => hp.dropout_rate.to_string(),
            "dropout-convention" => enum_name(&hp.dropout_convention),
            "epochs" => hp.epochs.to_string(),
            "batch-size" => hp.batch_size.to_string(),
            "seed" => hp.seed.to_string(),
            "margin" => hp.margin.to_string(),
            "wrong-answers" => match hp.wrong_answers {
                WrongAnswerPolicy::All => "all".to_string(),
                WrongAnswerPolicy::Sample(n) => format!("sample:{n}"),
            },
            "batch-mean" => hp.batch_mean.to_string(),
            "clip-norm" => show_opt(&hp.clip_norm),
            "lr-head-l2" => self.lr_head.l2.to_string(),
            "lr-head-iterations" => self.lr_head.iterations.to_string(),
            "lr-head-tolerance" => self.lr_head.tolerance.to_string(),
            "synth-answers" => self.synth.answers.to_string(),
            "synth-questions" => self.synth.questions_per_answer.to_string(),
            "synth-signature" => self.synth.signature_len.to_string(),
            "synth-noise" => self.synth.noise_len.to_string(),
            "gradcheck-instances" => self.gradcheck_instances.to_string(),
            "gradcheck-tolerance" => self.gradcheck_tolerance.to_string(),
            k => return Err(config_err(k, "unknown config key")),
        })
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        CONFIG_KEYS
            .iter()
            .map(|k| (k.to_string(), self.get(k).expect("listed key")))
            .collect()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// The config in `key = value` form, every key included.
    pub fn render(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Defaults, then the config file, then `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (k, v) in parse_config_text(&text)? {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.variant == Variant::Fts && self.output_mode == OutputMode::Concat {
            return Err(config_err("output-mode", "concat is only valid with variant fts-brnn-s"));
        }
        if self.seq_len == Some(0) {
            return Err(config_err("seq-len", "must be at least 1"));
        }
        if self.hidden_dim == 0 {
            return Err(config_err("hidden-dim", "must be at least 1"));
        }
        if self.embedding_dim == 0 {
            return Err(config_err("embedding-dim", "must be at least 1"));
        }
        if self.min_answer_count == 0 {
            return Err(config_err("min-answer-count", "must be at least 1"));
        }
        Ok(())
    }

    fn require<'a>(&self, path: &'a Option<PathBuf>, key: &str, command: &str) -> Result<&'a Path> {
        path.as_deref()
            .ok_or_else(|| config_err(key, format!("required by `{command}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestMeta {
    pub epoch: usize,
    pub val_acc_innerp: f64,
}

/// Storage width of checkpoint tensor payloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub vocab: Vocabulary,
    pub answers: AnswerSet,
    pub model: FtsModel,
    pub lr_head: Option<LrModel>,
    pub best: Option<BestMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dims: Vec<usize>,
    /// Byte offset from the start of the payload section.
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: Precision,
    config: BTreeMap<String, String>,
    model: ModelConfig,
    vocab: Vec<String>,
    unk_policy: UnkPolicy,
    trainable: Vec<bool>,
    answers: AnswerSet,
    best: Option<BestMeta>,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut all = self.model.named();
        all.push(("embeddings".to_string(), &self.model.embeddings.table));
        if let Some(lr) = &self.lr_head {
            all.push(("lr_head.weights".to_string(), &lr.weights));
            all.push(("lr_head.bias".to_string(), &lr.bias));
        }
        all
    }

    /// Serialize to bytes: magic, `u64` little-endian header length, JSON header, then
    /// little-endian tensor payloads in directory order.
    pub fn to_bytes(&self, precision: Precision) -> Vec<u8> {
        let mut offset = 0u64;
        let mut entries = Vec::new();
        let tensors = self.tensors();
        for (name, t) in &tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                dims: t.dims().to_vec(),
                offset,
            });
            offset += (t.len() * precision.width()) as u64;
        }
        let header = Header {
            version: CHECKPOINT_VERSION,
            dtype: precision,
            config: self.config.to_pairs().into_iter().collect(),
            model: self.model.config,
            vocab: self.vocab.tokens().to_vec(),
            unk_policy: self.vocab.unk_policy,
            trainable: self.model.embeddings.trainable.clone(),
            answers: self.answers.clone(),
            best: self.best,
            tensors: entries,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(14 + json.len() + offset as usize);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &tensors {
            for &v in t.as_slice() {
                match precision {
                    Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                    Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() {
            return Err(if CHECKPOINT_MAGIC.starts_with(bytes) && !bytes.is_empty() {
                Error::Truncated("magic")
            } else {
                Error::BadMagic
            });
        }
        if &bytes[..6] != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic);
        }
        let len_bytes: [u8; 8] = bytes
            .get(6..14)
            .ok_or(Error::Truncated("header length"))?
            .try_into()
            .expect("eight bytes");
        let header_len = usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| Error::Truncated("header"))?;
        let header_end = 14usize.checked_add(header_len).ok_or(Error::Truncated("header"))?;
        let json = bytes.get(14..header_end).ok_or(Error::Truncated("header"))?;
        let value: serde_json::Value =
            serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let version = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Checkpoint("header has no version".into()))?;
        if version != u64::from(CHECKPOINT_VERSION) {
            return Err(Error::Version(u32::try_from(version).unwrap_or(u32::MAX)));
        }
        let header: Header =
            serde_json::from_value(value).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let payload = &bytes[header_end..];

        let width = header.dtype.width();
        let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
        for e in &header.tensors {
            let n: usize = e.dims.iter().product();
            let start = usize::try_from(e.offset).map_err(|_| Error::Truncated("tensor payload"))?;
            let raw = start
                .checked_add(n * width)
                .and_then(|end| payload.get(start..end))
                .ok_or(Error::Truncated("tensor payload"))?;
            let data: Vec<f64> = match header.dtype {
                Precision::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("four bytes"))))
                    .collect(),
                Precision::F64 => raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
                    .collect(),
            };
            if tensors.insert(e.name.clone(), Tensor::from_shape(&e.dims, data)?).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor `{}`", e.name)));
            }
        }

        let config = RunConfig::from_pairs(header.config.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        let vocab = Vocabulary::from_tokens(header.vocab, header.unk_policy)?;
        let table = tensors
            .remove("embeddings")
            .ok_or_else(|| Error::Checkpoint("missing tensor `embeddings`".into()))?;
        if table.dims().len() != 2 || table.rows() != vocab.len() || header.trainable.len() != vocab.len() {
            return Err(Error::Checkpoint("embedding table does not match the vocabulary".into()));
        }
        let embeddings = Embeddings {
            table,
            trainable: header.trainable,
        };
        // the RNG only fills tensors that are overwritten below
        let mut model = FtsModel::new(header.model, embeddings, &mut ChaCha8Rng::seed_from_u64(0))?;
        for (name, slot) in model.named_mut() {
            let t = tensors
                .remove(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.dims() != slot.dims() {
                return Err(Error::shape("checkpoint tensor", slot.dims(), t.dims()));
            }
            *slot = t;
        }
        let lr_head = match (tensors.remove("lr_head.weights"), tensors.remove("lr_head.bias")) {
            (Some(weights), Some(bias)) => Some(LrModel { weights, bias }),
            (None, None) => None,
            _ => return Err(Error::Checkpoint("incomplete logistic-regression head".into())),
        };
        if let Some(name) = tensors.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor `{name}`")));
        }
        Ok(Checkpoint {
            config,
            vocab,
            answers: header.answers,
            model,
            lr_head,
            best: header.best,
        })
    }
}

/// Write `bytes` next to `path` and rename into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    save_checkpoint_as(path, ckpt, Precision::F32)
}

pub fn save_checkpoint_as(path: impl AsRef<Path>, ckpt: &Checkpoint, precision: Precision) -> Result<()> {
    write_atomic(path.as_ref(), &ckpt.to_bytes(precision))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// Encoded train/validation/test splits sharing one vocabulary and answer set.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    pub vocab: Vocabulary,
    pub pretrained: Option<EmbeddingTable>,
}

/// Load (or split) the dataset, load pretrained vectors, build the vocabulary from the
/// training split and encode all three splits.
pub fn prepare_data(cfg: &RunConfig) -> Result<Prepared> {
    let path = cfg.require(&cfg.dataset, "dataset", "train")?;
    let (train, valid, test) = if split_exists(path) {
        load_split(path)?
    } else {
        let full = filter_min_answer_count(&load_dataset(path)?, cfg.min_answer_count)?;
        split_dataset(&full, cfg.hyper.seed)
    };
    let pretrained = match &cfg.embeddings {
        Some(p) => Some(load_embeddings(p, cfg.embedding_dim)?),
        None => None,
    };
    Ok(prepare_splits(train, valid, test, pretrained, cfg.unk_policy))
}

pub fn prepare_splits(
    train: Dataset,
    valid: Dataset,
    test: Dataset,
    pretrained: Option<EmbeddingTable>,
    unk_policy: UnkPolicy,
) -> Prepared {
    let vocab = Vocabulary::build(&[&train], pretrained.as_ref(), unk_policy);
    Prepared {
        train: encode(&train, &vocab),
        valid: encode(&valid, &vocab),
        test: encode(&test, &vocab),
        vocab,
        pretrained,
    }
}

/// The model config for `data`, deriving the shared encoder's sequence length from the
/// longest training question when it is not set.
pub fn model_config(cfg: &RunConfig, train: &Dataset) -> ModelConfig {
    let seq_len = match cfg.variant {
        Variant::Fts => None,
        Variant::Shared => cfg
            .seq_len
            .or_else(|| train.questions.iter().map(|q| q.token_ids.len()).max()),
    };
    ModelConfig {
        variant: cfg.variant,
        output_mode: cfg.output_mode,
        hidden_dim: cfg.hidden_dim,
        seq_len,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_acc_innerp: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub metrics: Vec<EpochMetrics>,
    pub best: Checkpoint,
    pub last: Checkpoint,
}

/// Train for `cfg.hyper.epochs` epochs, keeping the epoch with the best validation
/// inner-product accuracy. With `out`, writes `config.txt`, `metrics.jsonl`, `best.ckpt`
/// and `final.ckpt` there.
pub fn train_run(cfg: &RunConfig, data: &Prepared, out: Option<&Path>) -> Result<TrainSummary> {
    if data.train.is_empty() {
        return Err(Error::EmptyDataset("loading the training split"));
    }
    let mut cfg = cfg.clone();
    let model_cfg = model_config(&cfg, &data.train);
    cfg.seq_len = model_cfg.seq_len;
    cfg.validate()?;
    let hp = cfg.hyper;

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let embeddings = Embeddings::build(
        &data.vocab,
        data.pretrained.as_ref(),
        cfg.embedding_dim,
        hp.train_embeddings,
        &mut rng,
    )?;
    let mut model = FtsModel::new(model_cfg, embeddings, &mut rng)?;
    let mut state = OptimizerState::default();

    let mut metrics_file = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            write_atomic(&dir.join("config.txt"), cfg.render().as_bytes())?;
            let p = dir.join("metrics.jsonl");
            Some((BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?), p))
        }
        None => None,
    };
    log::info!("resolved config:\n{}", cfg.render());

    let snapshot = |model: &FtsModel, best: Option<BestMeta>| Checkpoint {
        config: cfg.clone(),
        vocab: data.vocab.clone(),
        answers: data.train.answers.clone(),
        model: model.clone(),
        lr_head: None,
        best,
    };

    let mut metrics = Vec::with_capacity(hp.epochs);
    let mut best: Option<(BestMeta, FtsModel)> = None;
    for epoch in 1..=hp.epochs {
        let stats = train_epoch(&mut model, &data.train, &hp, &mut state, &mut rng)?;
        let val = if data.valid.is_empty() {
            None
        } else {
            Some(evaluate(&model, &data.valid, EvalMethod::InnerProduct, None)?)
        };
        let m = EpochMetrics {
            epoch,
            mean_loss: stats.mean_loss,
            val_acc_innerp: val,
        };
        log::info!(
            "epoch {epoch}: mean loss {:.6}, validation accuracy {}",
            m.mean_loss,
            val.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
        );
        if let Some((w, p)) = &mut metrics_file {
            let line = serde_json::to_string(&m).expect("metrics serialize");
            writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| Error::io(p.clone(), e))?;
        }
        metrics.push(m);
        if let Some(v) = val {
            if best.as_ref().is_none_or(|(b, _)| v > b.val_acc_innerp) {
                let meta = BestMeta { epoch, val_acc_innerp: v };
                if let Some(dir) = out {
                    save_checkpoint(dir.join("best.ckpt"), &snapshot(&model, Some(meta)))?;
                }
                best = Some((meta, model.clone()));
            }
        }
    }

    let with_head = |m: &FtsModel, meta: Option<BestMeta>| -> Result<Checkpoint> {
        let mut ckpt = snapshot(m, meta);
        ckpt.lr_head = match fit_lr_head(m, &data.train, &cfg.lr_head) {
            Ok(head) => Some(head),
            Err(e) => {
                log::warn!("logistic-regression head not trained: {e}");
                None
            }
        };
        Ok(ckpt)
    };
    let last_meta = best.as_ref().map(|(b, _)| *b);
    let last = with_head(&model, last_meta)?;
    let best = match &best {
        Some((meta, m)) => with_head(m, Some(*meta))?,
        None => last.clone(),
    };
    if let Some(dir) = out {
        save_checkpoint(dir.join("best.ckpt"), &best)?;
        save_checkpoint(dir.join("final.ckpt"), &last)?;
    }
    Ok(TrainSummary { metrics, best, last })
}

/// Re-index `d` onto `answers` by phrase and encode it with `vocab`. Questions whose
/// answer is unknown are dropped with a warning.
pub fn align_to_checkpoint(d: &Dataset, answers: &AnswerSet, vocab: &Vocabulary) -> Dataset {
    let by_phrase: BTreeMap<&str, usize> = answers.answers.iter().map(|a| (a.phrase.as_str(), a.id)).collect();
    let mut dropped = 0;
    let questions: Vec<Question> = d
        .questions
        .iter()
        .filter_map(|q| match by_phrase.get(d.answers.phrase(q.answer_id)) {
            Some(&id) => Some(Question {
                answer_id: id,
                ..q.clone()
            }),
            None => {
                dropped += 1;
                None
            }
        })
        .collect();
    if dropped > 0 {
        log::warn!("{dropped} questions have answers unknown to the checkpoint; skipped");
    }
    encode(
        &Dataset {
            questions,
            answers: answers.clone(),
            split: d.split,
        },
        vocab,
    )
}

/// The evaluation split for `eval` and `predict`: `<dataset>.test` if a split exists,
/// otherwise the dataset file itself.
fn evaluation_data(cfg: &RunConfig, ckpt: &Checkpoint, command: &str) -> Result<Dataset> {
    let path = cfg.require(&cfg.dataset, "dataset", command)?;
    let raw = if split_exists(path) {
        load_split(path)?.2
    } else {
        load_dataset(path)?
    };
    let d = align_to_checkpoint(&raw, &ckpt.answers, &ckpt.vocab);
    if d.is_empty() {
        return Err(Error::EmptyDataset("evaluation"));
    }
    Ok(d)
}

/// Write `question_index, true_answer, predicted_answer, top5_ids` rows.
pub fn predictions_tsv(model: &FtsModel, data: &Dataset, method: EvalMethod, lr: Option<&LrModel>) -> Result<String> {
    let mut out = String::from("question_index\ttrue_answer\tpredicted_answer\ttop5_ids\n");
    for p in predict_all(model, data, method, lr)? {
        let top: Vec<String> = p.ranked.iter().take(5).map(usize::to_string).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            p.index,
            data.answers.phrase(p.truth),
            data.answers.phrase(p.predicted),
            top.join(",")
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and write it to --dataset.
    Synth,
    /// Filter rare answers and write <dataset>.train/.valid/.test.
    Split,
    /// Train a model; writes metrics, config and checkpoints to --out.
    Train,
    /// Report the accuracy of --checkpoint on the test split of --dataset.
    Eval,
    /// Write ranked predictions for every test question.
    Predict,
    /// Compare analytic gradients with finite differences on random instances.
    Gradcheck,
}

/// Config flags shared by every command. Any key can also be given with `--set key=value`.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// `key = value` config file, overridden by flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset: Option<String>,
    #[arg(long, global = true)]
    pub embeddings: Option<String>,
    #[arg(long, global = true)]
    pub checkpoint: Option<String>,
    #[arg(long, global = true)]
    pub out: Option<String>,
    /// fts-brnn or fts-brnn-s
    #[arg(long, global = true)]
    pub variant: Option<String>,
    /// full-time or pooling
    #[arg(long, global = true)]
    pub loss: Option<String>,
    /// affine or concat
    #[arg(long, global = true)]
    pub output_mode: Option<String>,
    #[arg(long, global = true)]
    pub lr: Option<String>,
    #[arg(long, global = true)]
    pub momentum: Option<String>,
    #[arg(long, global = true)]
    pub dropout: Option<String>,
    #[arg(long, global = true)]
    pub epochs: Option<String>,
    #[arg(long, global = true)]
    pub batch_size: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<String>,
    /// innerp or lr
    #[arg(long, global = true)]
    pub eval_method: Option<String>,
    #[arg(long, global = true)]
    pub seq_len: Option<String>,
    #[arg(long, global = true)]
    pub min_answer_count: Option<String>,
    #[arg(long, global = true)]
    pub hidden_dim: Option<String>,
    #[arg(long, global = true)]
    pub embedding_dim: Option<String>,
    /// Any config key, e.g. `--set margin=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
}

impl Flags {
    pub fn overrides(&self) -> Result<Vec<(String, String)>> {
        let named = [
            ("dataset", &self.dataset),
            ("embeddings", &self.embeddings),
            ("checkpoint", &self.checkpoint),
            ("out", &self.out),
            ("variant", &self.variant),
            ("loss", &self.loss),
            ("output-mode", &self.output_mode),
            ("lr", &self.lr),
            ("momentum", &self.momentum),
            ("dropout", &self.dropout),
            ("epochs", &self.epochs),
            ("batch-size", &self.batch_size),
            ("seed", &self.seed),
            ("eval-method", &self.eval_method),
            ("seq-len", &self.seq_len),
            ("min-answer-count", &self.min_answer_count),
            ("hidden-dim", &self.hidden_dim),
            ("embedding-dim", &self.embedding_dim),
        ];
        let mut out = Vec::new();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| config_err(kv, "expected --set key=value"))?;
            out.push((normalize_key(k), v.to_string()));
        }
        out.extend(
            named
                .into_iter()
                .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone()))),
        );
        Ok(out)
    }
}

#[derive(Debug, Parser)]
#[command(name = "ftsqa", version, about = "Full-time supervised bidirectional GRU question answering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

impl Cli {
    pub fn config(&self) -> Result<RunConfig> {
        RunConfig::resolve(self.flags.config.as_deref(), &self.flags.overrides()?)
    }
}

/// What a command produced.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Synth {
        path: PathBuf,
        questions: usize,
        answers: usize,
    },
    Split {
        train: usize,
        valid: usize,
        test: usize,
        answers: usize,
    },
    Train {
        out: PathBuf,
        best: Option<BestMeta>,
        final_loss: f64,
        test_accuracy: Option<f64>,
    },
    Eval {
        method: EvalMethod,
        questions: usize,
        accuracy: f64,
    },
    Predict {
        path: Option<PathBuf>,
        tsv: String,
    },
    Gradcheck {
        lines: Vec<String>,
        passed: bool,
    },
}

impl Outcome {
    pub fn success(&self) -> bool {
        !matches!(self, Outcome::Gradcheck { passed: false, .. })
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Synth { path, questions, answers } => {
                write!(f, "wrote {questions} questions over {answers} answers to {}", path.display())
            }
            Outcome::Split { train, valid, test, answers } => {
                write!(f, "split {answers} answers into {train} train, {valid} valid, {test} test questions")
            }
            Outcome::Train {
                out,
                best,
                final_loss,
                test_accuracy,
            } => {
                write!(f, "final mean loss {final_loss:.6}")?;
                if let Some(b) = best {
                    write!(f, "; best epoch {} (valid innerp {:.4})", b.epoch, b.val_acc_innerp)?;
                }
                if let Some(a) = test_accuracy {
                    write!(f, "; test accuracy {a:.4}")?;
                }
                write!(f, "; artifacts in {}", out.display())
            }
            Outcome::Eval {
                method,
                questions,
                accuracy,
            } => write!(f, "{} accuracy {accuracy:.4} on {questions} questions", enum_name(method)),
            Outcome::Predict { path: Some(p), tsv } => {
                write!(f, "wrote {} predictions to {}", tsv.lines().count() - 1, p.display())
            }
            Outcome::Predict { path: None, tsv } => write!(f, "{}", tsv.trim_end()),
            Outcome::Gradcheck { lines, passed } => {
                for l in lines {
                    writeln!(f, "{l}")?;
                }
                write!(f, "{}", if *passed { "PASS" } else { "FAIL" })
            }
        }
    }
}

pub fn run(command: Command, cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    match command {
        Command::Synth => {
            let path = cfg.require(&cfg.dataset, "dataset", "synth")?;
            let s = cfg.synth;
            let d = generate_synthetic(s.answers, s.questions_per_answer, s.signature_len, s.noise_len, cfg.hyper.seed);
            save_dataset(path, &d)?;
            Ok(Outcome::Synth {
                path: path.to_path_buf(),
                questions: d.len(),
                answers: d.answers.len(),
            })
        }
        Command::Split => {
            let path = cfg.require(&cfg.dataset, "dataset", "split")?;
            let d = filter_min_answer_count(&load_dataset(path)?, cfg.min_answer_count)?;
            let (train, valid, test) = split_dataset(&d, cfg.hyper.seed);
            save_split(path, &train, &valid, &test)?;
            Ok(Outcome::Split {
                train: train.len(),
                valid: valid.len(),
                test: test.len(),
                answers: d.answers.len(),
            })
        }
        Command::Train => {
            let out = cfg.require(&cfg.out, "out", "train")?;
            let data = prepare_data(cfg)?;
            let summary = train_run(cfg, &data, Some(out))?;
            let test_accuracy = if data.test.is_empty() {
                None
            } else {
                let b = &summary.best;
                Some(evaluate(&b.model, &data.test, cfg.eval_method, b.lr_head.as_ref())?)
            };
            Ok(Outcome::Train {
                out: out.to_path_buf(),
                best: summary.best.best,
                final_loss: summary.metrics.last().map_or(f64::NAN, |m| m.mean_loss),
                test_accuracy,
            })
        }
        Command::Eval => {
            let ckpt = load_checkpoint(cfg.require(&cfg.checkpoint, "checkpoint", "eval")?)?;
            let data = evaluation_data(cfg, &ckpt, "eval")?;
            let accuracy = evaluate(&ckpt.model, &data, cfg.eval_method, ckpt.lr_head.as_ref())?;
            Ok(Outcome::Eval {
                method: cfg.eval_method,
                questions: data.len(),
                accuracy,
            })
        }
        Command::Predict => {
            let ckpt = load_checkpoint(cfg.require(&cfg.checkpoint, "checkpoint", "predict")?)?;
            let data = evaluation_data(cfg, &ckpt, "predict")?;
            let tsv = predictions_tsv(&ckpt.model, &data, cfg.eval_method, ckpt.lr_head.as_ref())?;
            let path = match &cfg.out {
                Some(dir) => {
                    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                    let p = dir.join("predictions.tsv");
                    write_atomic(&p, tsv.as_bytes())?;
                    Some(p)
                }
                None => None,
            };
            Ok(Outcome::Predict { path, tsv })
        }
        Command::Gradcheck => {
            let mut lines = Vec::new();
            let mut passed = true;
            for seed in cfg.hyper.seed..cfg.hyper.seed + cfg.gradcheck_instances as u64 {
                let (model, ex) = random_instance(cfg.variant, cfg.output_mode, cfg.hyper.loss_kind, seed)?;
                let report = gradient_check(&model, &ex, cfg.gradcheck_tolerance)?;
                let (name, err) = report.worst().unwrap_or(("-", 0.0));
                lines.push(format!(
                    "instance {seed}: max relative error {err:.3e} ({name}) {}",
                    if report.passed { "ok" } else { "FAILED" }
                ));
                passed &= report.passed;
            }
            Ok(Outcome::Gradcheck { lines, passed })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_flags_over_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        fs::write(&file, "# comment\nlr = 0.01\nbatch_size = 8\n\nvariant = fts-brnn-s\n").unwrap();
        let cfg = RunConfig::resolve(Some(&file), &[("lr".into(), "0.005".into())]).unwrap();
        assert_eq!(cfg.hyper.learning_rate, 0.005);
        assert_eq!(cfg.hyper.batch_size, 8);
        assert_eq!(cfg.variant, Variant::Shared);
        assert_eq!(cfg.hyper.momentum, 0.8);
    }

    #[test]
    fn render_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("wrong_answers", "sample:4").unwrap();
        cfg.set("clip-norm", "2.5").unwrap();
        cfg.set("dataset", "data/q.jsonl").unwrap();
        cfg.set("eval-method", "lr").unwrap();
        cfg.set("lr", "0.0003").unwrap();
        let pairs = parse_config_text(&cfg.render()).unwrap();
        let back = RunConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(pairs.len(), CONFIG_KEYS.len());
    }

    #[test]
    fn invalid_values_name_the_key() {
        let mut cfg = RunConfig::default();
        let err = cfg.set("batch-size", "many").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "batch-size"));
        let err = cfg.set("variant", "lstm").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "variant"));
        let err = cfg.set("colour", "red").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "colour"));
        cfg.set("output-mode", "concat").unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "output-mode"));
        let err = parse_config_text("lr 0.1").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "line 1"));
    }

    #[test]
    fn flags_parse_through_clap() {
        let cli = Cli::try_parse_from([
            "ftsqa",
            "train",
            "--lr",
            "0.001",
            "--variant",
            "fts-brnn-s",
            "--set",
            "margin=0.5",
            "--batch-size",
            "4",
        ])
        .unwrap();
        assert_eq!(cli.command, Command::Train);
        let cfg = cli.config().unwrap();
        assert_eq!(cfg.hyper.learning_rate, 0.001);
        assert_eq!(cfg.hyper.margin, 0.5);
        assert_eq!(cfg.hyper.batch_size, 4);
        assert_eq!(cfg.variant, Variant::Shared);
    }

    #[test]
    fn missing_required_path_is_a_config_error() {
        let err = run(Command::Train, &RunConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "out"));
        let err = run(Command::Eval, &RunConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "checkpoint"));
    }

    #[test]
    fn corrupted_headers_are_rejected() {
        assert!(matches!(Checkpoint::from_bytes(b"NOPE!!rest"), Err(Error::BadMagic)));
        assert!(matches!(Checkpoint::from_bytes(b""), Err(Error::BadMagic)));
        assert!(matches!(Checkpoint::from_bytes(b"FTSB"), Err(Error::Truncated(_))));
        assert!(matches!(Checkpoint::from_bytes(b"FTSB1\n\x01"), Err(Error::Truncated(_))));
        let mut b = CHECKPOINT_MAGIC.to_vec();
        b.extend_from_slice(&100u64.to_le_bytes());
        b.extend_from_slice(b"{}");
        assert!(matches!(Checkpoint::from_bytes(&b), Err(Error::Truncated(_))));
        let json = br#"{"version":7}"#;
        let mut b = CHECKPOINT_MAGIC.to_vec();
        b.extend_from_slice(&(json.len() as u64).to_le_bytes());
        b.extend_from_slice(json);
        assert!(matches!(Checkpoint::from_bytes(&b), Err(Error::Version(7))));
    }
}
