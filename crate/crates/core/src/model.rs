//! Question and answer encoders and their backward passes.
//!
//! A question is embedded token by token, read left to right by one GRU and right to left
//! by another, and each step's pair of hidden states is combined into an output vector:
//! `o_t = W_f f_t + W_b b_t + bias` in [`OutputMode::Affine`], or `[f_t; b_t]` in
//! [`OutputMode::Concat`].

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingTable, UnkPolicy, Vocabulary, PAD_ID, UNK_ID};
use crate::error::{Error, Result};
use crate::gru::{gru_backward, gru_forward, GruGrads, GruParams, GruStepCache};
use crate::numeric::{affine, hadamard, matvec, matvec_t_acc, outer_acc, Tensor};
use crate::optim::init_uniform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Bidirectional question encoder, separate unidirectional answer encoder.
    #[serde(rename = "fts-brnn")]
    Fts,
    /// One bidirectional encoder shared by questions and answers.
    #[serde(rename = "fts-brnn-s")]
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputMode {
    Affine,
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub output_mode: OutputMode,
    pub hidden_dim: usize,
    /// Common sequence length for the shared encoder; questions and answers are padded
    /// or truncated to it.
    pub seq_len: Option<usize>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::Model("hidden dimension must be positive".into()));
        }
        match (self.variant, self.output_mode, self.seq_len) {
            (Variant::Fts, OutputMode::Concat, _) => Err(Error::Model(
                "fts-brnn needs the affine output layer so question and answer dimensions agree".into(),
            )),
            (Variant::Shared, _, None | Some(0)) => {
                Err(Error::Model("fts-brnn-s needs a positive seq_len".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputLayer {
    pub w_forward: Tensor,
    pub w_backward: Tensor,
    pub bias: Tensor,
}

impl OutputLayer {
    pub fn zeros(d: usize) -> Self {
        OutputLayer {
            w_forward: Tensor::zeros(&[d, d]),
            w_backward: Tensor::zeros(&[d, d]),
            bias: Tensor::zeros(&[d]),
        }
    }

    pub fn named(&self) -> [(&'static str, &Tensor); 3] {
        [
            ("w_forward", &self.w_forward),
            ("w_backward", &self.w_backward),
            ("bias", &self.bias),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut Tensor); 3] {
        [
            ("w_forward", &mut self.w_forward),
            ("w_backward", &mut self.w_backward),
            ("bias", &mut self.bias),
        ]
    }

    fn apply(&self, f: &Tensor, b: &Tensor) -> Result<Tensor> {
        let mut o = affine(&self.w_forward, f, &self.bias)?;
        o.add_assign(&matvec(&self.w_backward, b)?)?;
        Ok(o)
    }
}

/// Word vectors for every vocabulary id, with a per-row trainability flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub table: Tensor,
    pub trainable: Vec<bool>,
}

impl Embeddings {
    /// Rows copied from `pretrained` are trainable only when `train_pretrained` is set.
    /// Every other row (UNK, PAD, tokens without a pretrained vector) is drawn uniformly
    /// and trained, except a zero-frozen UNK.
    pub fn build<R: Rng + ?Sized>(
        vocab: &Vocabulary,
        pretrained: Option<&EmbeddingTable>,
        dim: usize,
        train_pretrained: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if let Some(t) = pretrained {
            if t.dim != dim {
                return Err(Error::Model(format!(
                    "embedding file has dimension {}, model expects {dim}",
                    t.dim
                )));
            }
        }
        let mut table = Tensor::zeros(&[vocab.len(), dim]);
        let mut trainable = vec![true; vocab.len()];
        for (id, token) in vocab.tokens().iter().enumerate() {
            let row = table.row_mut(id);
            if id == UNK_ID && vocab.unk_policy == UnkPolicy::ZeroFrozen {
                trainable[id] = false;
                continue;
            }
            match pretrained.and_then(|t| t.get(token)).filter(|_| id != UNK_ID && id != PAD_ID) {
                Some(v) => {
                    row.copy_from_slice(v);
                    trainable[id] = train_pretrained;
                }
                None => row.copy_from_slice(init_uniform(dim, 1, rng).as_slice()),
            }
        }
        Ok(Embeddings { table, trainable })
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.table.rows()
    }

    pub fn lookup(&self, id: usize) -> Result<Tensor> {
        if id >= self.vocab_size() {
            return Err(Error::Model(format!("token id {id} outside vocabulary")));
        }
        Ok(Tensor::from_vec(self.table.row(id).to_vec()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FtsModel {
    pub config: ModelConfig,
    pub q_forward: GruParams,
    pub q_backward: GruParams,
    /// Absent in concat mode.
    pub out: Option<OutputLayer>,
    /// Present for [`Variant::Fts`] only.
    pub answer_encoder: Option<GruParams>,
    pub embeddings: Embeddings,
}

/// Everything the question-side backward pass needs.
#[derive(Debug, Clone)]
pub struct QuestionEncoding {
    pub token_ids: Vec<usize>,
    pub mask: Option<Vec<Tensor>>,
    pub forward: Vec<Tensor>,
    /// Aligned with the input: `backward[t]` is the state after reading token `t`.
    pub backward: Vec<Tensor>,
    pub outputs: Vec<Tensor>,
    forward_caches: Vec<GruStepCache>,
    /// In processing (reversed) order.
    backward_caches: Vec<GruStepCache>,
}

impl QuestionEncoding {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }
}

#[derive(Debug, Clone)]
enum AnswerCache {
    Recurrent {
        token_ids: Vec<usize>,
        caches: Vec<GruStepCache>,
    },
    Bidirectional(Box<QuestionEncoding>),
}

#[derive(Debug, Clone)]
pub struct AnswerEncoding {
    /// `[A_e]` (last hidden state) for the separate encoder, one output per step for the
    /// shared encoder.
    pub reps: Vec<Tensor>,
    cache: AnswerCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub q_forward: GruGrads,
    pub q_backward: GruGrads,
    pub out: Option<OutputLayer>,
    pub answer_encoder: Option<GruGrads>,
    /// Sparse rows, only for trainable rows that received gradient.
    pub embeddings: BTreeMap<usize, Tensor>,
}

impl ModelGrads {
    pub fn zeros_for(model: &FtsModel) -> Self {
        ModelGrads {
            q_forward: model.q_forward.zeros_like(),
            q_backward: model.q_backward.zeros_like(),
            out: model.out.as_ref().map(|o| OutputLayer::zeros(o.bias.len())),
            answer_encoder: model.answer_encoder.as_ref().map(GruParams::zeros_like),
            embeddings: BTreeMap::new(),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        dense_named(&self.q_forward, &self.q_backward, self.out.as_ref(), self.answer_encoder.as_ref())
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        dense_named_mut(
            &mut self.q_forward,
            &mut self.q_backward,
            self.out.as_mut(),
            self.answer_encoder.as_mut(),
        )
    }

    pub fn add_assign(&mut self, other: &ModelGrads) -> Result<()> {
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            a.add_assign(b)?;
        }
        for (id, g) in &other.embeddings {
            match self.embeddings.get_mut(id) {
                Some(row) => row.add_assign(g)?,
                None => {
                    self.embeddings.insert(*id, g.clone());
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, t) in self.named_mut() {
            t.scale(alpha);
        }
        for g in self.embeddings.values_mut() {
            g.scale(alpha);
        }
    }

    pub fn norm(&self) -> f64 {
        let dense = self.named().iter().map(|(_, t)| t.norm().powi(2)).sum::<f64>();
        let sparse = self.embeddings.values().map(|t| t.norm().powi(2)).sum::<f64>();
        (dense + sparse).sqrt()
    }

    fn add_embedding_row(&mut self, id: usize, g: &Tensor) -> Result<()> {
        match self.embeddings.get_mut(&id) {
            Some(row) => row.add_assign(g),
            None => {
                self.embeddings.insert(id, g.clone());
                Ok(())
            }
        }
    }
}

fn dense_named<'a>(
    qf: &'a GruParams,
    qb: &'a GruParams,
    out: Option<&'a OutputLayer>,
    ans: Option<&'a GruParams>,
) -> Vec<(String, &'a Tensor)> {
    let mut v: Vec<(String, &Tensor)> = Vec::new();
    v.extend(qf.named().into_iter().map(|(n, t)| (format!("q_forward.{n}"), t)));
    v.extend(qb.named().into_iter().map(|(n, t)| (format!("q_backward.{n}"), t)));
    if let Some(o) = out {
        v.extend(o.named().into_iter().map(|(n, t)| (format!("out.{n}"), t)));
    }
    if let Some(a) = ans {
        v.extend(a.named().into_iter().map(|(n, t)| (format!("answer.{n}"), t)));
    }
    v
}

fn dense_named_mut<'a>(
    qf: &'a mut GruParams,
    qb: &'a mut GruParams,
    out: Option<&'a mut OutputLayer>,
    ans: Option<&'a mut GruParams>,
) -> Vec<(String, &'a mut Tensor)> {
    let mut v: Vec<(String, &mut Tensor)> = Vec::new();
    v.extend(qf.named_mut().into_iter().map(|(n, t)| (format!("q_forward.{n}"), t)));
    v.extend(qb.named_mut().into_iter().map(|(n, t)| (format!("q_backward.{n}"), t)));
    if let Some(o) = out {
        v.extend(o.named_mut().into_iter().map(|(n, t)| (format!("out.{n}"), t)));
    }
    if let Some(a) = ans {
        v.extend(a.named_mut().into_iter().map(|(n, t)| (format!("answer.{n}"), t)));
    }
    v
}

/// Pad with PAD or truncate to exactly `len` tokens.
pub fn fit_length(ids: &[usize], len: usize) -> Vec<usize> {
    let mut out: Vec<usize> = ids.iter().copied().take(len).collect();
    out.resize(len, PAD_ID);
    out
}

impl FtsModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, embeddings: Embeddings, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.hidden_dim;
        let d_in = embeddings.dim();
        let q_forward = GruParams::init(d_in, d, rng);
        let q_backward = GruParams::init(d_in, d, rng);
        let out = match config.output_mode {
            OutputMode::Affine => Some(OutputLayer {
                w_forward: init_uniform(d, d, rng),
                w_backward: init_uniform(d, d, rng),
                bias: Tensor::zeros(&[d]),
            }),
            OutputMode::Concat => None,
        };
        let answer_encoder = match config.variant {
            Variant::Fts => Some(GruParams::init(d_in, d, rng)),
            Variant::Shared => None,
        };
        Ok(FtsModel {
            config,
            q_forward,
            q_backward,
            out,
            answer_encoder,
            embeddings,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    /// Dimension of a question output (and of every answer representation).
    pub fn rep_dim(&self) -> usize {
        match self.config.output_mode {
            OutputMode::Affine => self.hidden_dim(),
            OutputMode::Concat => 2 * self.hidden_dim(),
        }
    }

    /// Length a question of `n` tokens has once prepared for this model.
    pub fn question_len(&self, n: usize) -> usize {
        match (self.config.variant, self.config.seq_len) {
            (Variant::Shared, Some(t)) => t,
            _ => n,
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        dense_named(&self.q_forward, &self.q_backward, self.out.as_ref(), self.answer_encoder.as_ref())
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        dense_named_mut(
            &mut self.q_forward,
            &mut self.q_backward,
            self.out.as_mut(),
            self.answer_encoder.as_mut(),
        )
    }

    fn embed(&self, ids: &[usize]) -> Result<Vec<Tensor>> {
        ids.iter().map(|&id| self.embeddings.lookup(id)).collect()
    }

    fn encode_sequence(&self, ids: Vec<usize>, mask: Option<&[Tensor]>) -> Result<QuestionEncoding> {
        if ids.is_empty() {
            return Err(Error::EmptyInput("question tokens"));
        }
        let mut xs = self.embed(&ids)?;
        if let Some(mask) = mask {
            if mask.len() != xs.len() {
                return Err(Error::shape("dropout mask", mask.len(), xs.len()));
            }
            for (x, m) in xs.iter_mut().zip(mask) {
                *x = hadamard(x, m)?;
            }
        }
        let (forward, forward_caches) = gru_forward(&self.q_forward, &xs)?;
        let reversed: Vec<Tensor> = xs.into_iter().rev().collect();
        let (mut backward, backward_caches) = gru_forward(&self.q_backward, &reversed)?;
        backward.reverse();
        let outputs = forward
            .iter()
            .zip(&backward)
            .map(|(f, b)| match &self.out {
                Some(out) => out.apply(f, b),
                None => Ok(Tensor::concat(f, b)),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(QuestionEncoding {
            token_ids: ids,
            mask: mask.map(<[Tensor]>::to_vec),
            forward,
            backward,
            outputs,
            forward_caches,
            backward_caches,
        })
    }

    /// Run the bidirectional encoder over a question. For the shared variant the tokens
    /// are first padded or truncated to `seq_len`; `mask` must match that length.
    pub fn encode_question(&self, token_ids: &[usize], mask: Option<&[Tensor]>) -> Result<QuestionEncoding> {
        if token_ids.is_empty() {
            return Err(Error::EmptyInput("question tokens"));
        }
        let ids = match (self.config.variant, self.config.seq_len) {
            (Variant::Shared, Some(t)) => fit_length(token_ids, t),
            _ => token_ids.to_vec(),
        };
        self.encode_sequence(ids, mask)
    }

    /// Last hidden state of the answer GRU.
    pub fn encode_answer(&self, token_ids: &[usize]) -> Result<AnswerEncoding> {
        let enc = self
            .answer_encoder
            .as_ref()
            .ok_or_else(|| Error::Model("encode_answer requires the fts-brnn variant".into()))?;
        if token_ids.is_empty() {
            return Err(Error::EmptyInput("answer tokens"));
        }
        let (hs, caches) = gru_forward(enc, &self.embed(token_ids)?)?;
        Ok(AnswerEncoding {
            reps: vec![hs.last().cloned().expect("non-empty")],
            cache: AnswerCache::Recurrent {
                token_ids: token_ids.to_vec(),
                caches,
            },
        })
    }

    /// Per-step outputs of the shared encoder over the answer padded/truncated to `steps`.
    pub fn encode_answer_shared(&self, token_ids: &[usize], steps: usize) -> Result<AnswerEncoding> {
        if self.config.variant != Variant::Shared {
            return Err(Error::Model("encode_answer_shared requires the fts-brnn-s variant".into()));
        }
        if token_ids.is_empty() || steps == 0 {
            return Err(Error::EmptyInput("answer tokens"));
        }
        let enc = self.encode_sequence(fit_length(token_ids, steps), None)?;
        Ok(AnswerEncoding {
            reps: enc.outputs.clone(),
            cache: AnswerCache::Bidirectional(Box::new(enc)),
        })
    }

    /// Encode an answer the way this model's variant does during training.
    pub fn encode_answer_for_training(&self, token_ids: &[usize]) -> Result<AnswerEncoding> {
        match self.config.variant {
            Variant::Fts => self.encode_answer(token_ids),
            Variant::Shared => self.encode_answer_shared(token_ids, self.config.seq_len.unwrap_or(1)),
        }
    }

    /// Backpropagate output gradients through the output layer, both GRUs, the dropout
    /// mask and into trainable embedding rows.
    pub fn backward_sequence(&self, enc: &QuestionEncoding, grad_outputs: &[Tensor], grads: &mut ModelGrads) -> Result<()> {
        let steps = enc.len();
        if grad_outputs.len() != steps {
            return Err(Error::shape("backward_sequence", steps, grad_outputs.len()));
        }
        let d = self.hidden_dim();
        let mut grad_f = Vec::with_capacity(steps);
        let mut grad_b = Vec::with_capacity(steps);
        for (t, g) in grad_outputs.iter().enumerate() {
            match (&self.out, grads.out.as_mut()) {
                (Some(out), Some(gout)) => {
                    outer_acc(&mut gout.w_forward, g, &enc.forward[t])?;
                    outer_acc(&mut gout.w_backward, g, &enc.backward[t])?;
                    gout.bias.add_assign(g)?;
                    let mut gf = Tensor::zeros(&[d]);
                    matvec_t_acc(&out.w_forward, g, &mut gf)?;
                    let mut gb = Tensor::zeros(&[d]);
                    matvec_t_acc(&out.w_backward, g, &mut gb)?;
                    grad_f.push(gf);
                    grad_b.push(gb);
                }
                (None, None) => {
                    if g.len() != 2 * d {
                        return Err(Error::shape("backward_sequence", g.dims(), [2 * d]));
                    }
                    grad_f.push(Tensor::from_vec(g.as_slice()[..d].to_vec()));
                    grad_b.push(Tensor::from_vec(g.as_slice()[d..].to_vec()));
                }
                _ => return Err(Error::Model("gradient buffers do not match the model".into())),
            }
        }
        let fwd = gru_backward(&self.q_forward, &enc.forward_caches, &grad_f)?;
        grad_b.reverse();
        let bwd = gru_backward(&self.q_backward, &enc.backward_caches, &grad_b)?;
        grads.q_forward.add_assign(&fwd.grads)?;
        grads.q_backward.add_assign(&bwd.grads)?;

        for t in 0..steps {
            let id = enc.token_ids[t];
            if !self.embeddings.trainable[id] {
                continue;
            }
            let mut gx = fwd.grad_xs[t].clone();
            gx.add_assign(&bwd.grad_xs[steps - 1 - t])?;
            if let Some(mask) = &enc.mask {
                gx = hadamard(&gx, &mask[t])?;
            }
            grads.add_embedding_row(id, &gx)?;
        }
        Ok(())
    }

    pub fn backward_answer(&self, enc: &AnswerEncoding, grad_reps: &[Tensor], grads: &mut ModelGrads) -> Result<()> {
        match &enc.cache {
            AnswerCache::Recurrent { token_ids, caches } => {
                let params = self
                    .answer_encoder
                    .as_ref()
                    .ok_or_else(|| Error::Model("answer encoder missing".into()))?;
                if grad_reps.len() != 1 {
                    return Err(Error::shape("backward_answer", 1, grad_reps.len()));
                }
                let mut grad_hs = vec![Tensor::zeros(&[self.hidden_dim()]); caches.len()];
                *grad_hs.last_mut().expect("non-empty") = grad_reps[0].clone();
                let back = gru_backward(params, caches, &grad_hs)?;
                grads
                    .answer_encoder
                    .as_mut()
                    .ok_or_else(|| Error::Model("gradient buffers do not match the model".into()))?
                    .add_assign(&back.grads)?;
                for (t, &id) in token_ids.iter().enumerate() {
                    if self.embeddings.trainable[id] {
                        grads.add_embedding_row(id, &back.grad_xs[t])?;
                    }
                }
                Ok(())
            }
            AnswerCache::Bidirectional(q) => self.backward_sequence(q, grad_reps, grads),
        }
    }

    /// Gradients of one example given upstream gradients on the question outputs and on
    /// each answer representation that took part in the loss.
    pub fn model_backward(
        &self,
        question: &QuestionEncoding,
        grad_outputs: &[Tensor],
        answers: &[(&AnswerEncoding, &[Tensor])],
    ) -> Result<ModelGrads> {
        let mut grads = ModelGrads::zeros_for(self);
        self.backward_sequence(question, grad_outputs, &mut grads)?;
        for (enc, g) in answers {
            self.backward_answer(enc, g, &mut grads)?;
        }
        Ok(grads)
    }
}
