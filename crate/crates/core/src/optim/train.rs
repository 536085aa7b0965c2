use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand_chacha::ChaCha8Rng;

use super::{dropout_mask, HyperParams, OptimizerState};
use crate::data::{AnswerSet, Dataset, Question};
use crate::error::{Error, Result};
use crate::infer::average_pool;
use crate::loss::{
    full_time_loss, full_time_loss_shared, pooling_loss, LossConfig, LossKind, WrongAnswerPolicy,
};
use crate::model::{AnswerEncoding, FtsModel, ModelGrads, QuestionEncoding, Variant};
use crate::numeric::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Mean per-question loss over the epoch (with dropout active).
    pub mean_loss: f64,
    pub examples: usize,
}

/// Answer encodings for one parameter update, plus the gradients flowing into them.
pub(crate) struct AnswerBank {
    encodings: BTreeMap<usize, AnswerEncoding>,
    /// What the loss sees: per-step outputs, or their average for the shared encoder
    /// under the pooling loss.
    views: BTreeMap<usize, Vec<Tensor>>,
    grads: BTreeMap<usize, Vec<Tensor>>,
    pooled_view: bool,
}

impl AnswerBank {
    pub(crate) fn encode(
        model: &FtsModel,
        kind: LossKind,
        answers: &AnswerSet,
        ids: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let pooled_view = model.variant() == Variant::Shared && kind == LossKind::Pooling;
        let mut encodings = BTreeMap::new();
        let mut views = BTreeMap::new();
        for id in ids {
            if encodings.contains_key(&id) {
                continue;
            }
            let answer = answers
                .get(id)
                .ok_or_else(|| Error::Model(format!("unknown answer id {id}")))?;
            let enc = model.encode_answer_for_training(&answer.token_ids)?;
            let view = if pooled_view {
                vec![average_pool(&enc.reps)?]
            } else {
                enc.reps.clone()
            };
            views.insert(id, view);
            encodings.insert(id, enc);
        }
        Ok(AnswerBank {
            encodings,
            views,
            grads: BTreeMap::new(),
            pooled_view,
        })
    }

    /// Loss of one question against its correct answer and `wrong`; question-side
    /// gradients go straight into `grads`, answer-side ones are held until
    /// [`AnswerBank::backward`].
    pub(crate) fn accumulate(
        &mut self,
        model: &FtsModel,
        kind: LossKind,
        cfg: &LossConfig,
        question: &QuestionEncoding,
        correct: usize,
        wrong: &[usize],
        grads: &mut ModelGrads,
    ) -> Result<f64> {
        let correct_view = &self.views[&correct];
        let wrong_views: Vec<(usize, &[Tensor])> =
            wrong.iter().map(|id| (*id, &self.views[id][..])).collect();
        let res = match (model.variant(), kind) {
            (Variant::Shared, LossKind::FullTime) => {
                full_time_loss_shared(&question.outputs, correct_view, &wrong_views, cfg)?
            }
            (_, kind) => {
                let single: Vec<(usize, &Tensor)> =
                    wrong_views.iter().map(|(id, v)| (*id, &v[0])).collect();
                match kind {
                    LossKind::FullTime => full_time_loss(&question.outputs, &correct_view[0], &single, cfg)?,
                    LossKind::Pooling => pooling_loss(&question.outputs, &correct_view[0], &single, cfg)?,
                }
            }
        };
        model.backward_sequence(question, &res.grad_outputs, grads)?;
        add_view_grad(&mut self.grads, correct, &res.grad_correct)?;
        for (id, g) in &res.grad_wrong {
            add_view_grad(&mut self.grads, *id, g)?;
        }
        Ok(res.value)
    }

    pub(crate) fn backward(self, model: &FtsModel, grads: &mut ModelGrads) -> Result<()> {
        for (id, g) in &self.grads {
            let enc = &self.encodings[id];
            if self.pooled_view {
                let steps = enc.reps.len();
                let mut per_step = g[0].clone();
                per_step.scale(1.0 / steps as f64);
                model.backward_answer(enc, &vec![per_step; steps], grads)?;
            } else {
                model.backward_answer(enc, g, grads)?;
            }
        }
        Ok(())
    }
}

fn add_view_grad(acc: &mut BTreeMap<usize, Vec<Tensor>>, id: usize, g: &[Tensor]) -> Result<()> {
    match acc.get_mut(&id) {
        Some(existing) => {
            for (a, b) in existing.iter_mut().zip(g) {
                a.add_assign(b)?;
            }
        }
        None => {
            acc.insert(id, g.to_vec());
        }
    }
    Ok(())
}

/// Loss and exact gradients of a single question against the given wrong answers, with
/// an optional dropout mask. This is the per-question term the training loop sums.
pub fn example_loss(
    model: &FtsModel,
    question: &Question,
    wrong: &[usize],
    answers: &AnswerSet,
    kind: LossKind,
    cfg: &LossConfig,
    mask: Option<&[Tensor]>,
) -> Result<(f64, ModelGrads)> {
    let mut grads = ModelGrads::zeros_for(model);
    let mut bank = AnswerBank::encode(
        model,
        kind,
        answers,
        std::iter::once(question.answer_id).chain(wrong.iter().copied()),
    )?;
    let enc = model.encode_question(&question.token_ids, mask)?;
    let value = bank.accumulate(model, kind, cfg, &enc, question.answer_id, wrong, &mut grads)?;
    bank.backward(model, &mut grads)?;
    Ok((value, grads))
}

fn wrong_answers(policy: WrongAnswerPolicy, correct: usize, n_answers: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match policy {
        WrongAnswerPolicy::All => (0..n_answers).filter(|&a| a != correct).collect(),
        WrongAnswerPolicy::Sample(k) => {
            let others = n_answers.saturating_sub(1);
            let mut picked: Vec<usize> = index::sample(rng, others, k.min(others))
                .into_iter()
                .map(|i| if i >= correct { i + 1 } else { i })
                .collect();
            picked.sort_unstable();
            picked
        }
    }
}

/// One pass over `train` in a seeded random order, one optimizer step per batch.
///
/// Answer encodings are recomputed for every batch. Per-question gradients are summed in
/// batch order and averaged when `hp.batch_mean` is set.
pub fn train_epoch(
    model: &mut FtsModel,
    train: &Dataset,
    hp: &HyperParams,
    state: &mut OptimizerState,
    rng: &mut ChaCha8Rng,
) -> Result<EpochStats> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("loading the training split"));
    }
    let cfg = hp.loss_config();
    let n_answers = train.answers.len();
    let drop = hp.drop_probability();
    let input_dim = model.embeddings.dim();

    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;

    for (batch_idx, batch) in order.chunks(hp.batch_size).enumerate() {
        let wrong: Vec<Vec<usize>> = batch
            .iter()
            .map(|&i| wrong_answers(hp.wrong_answers, train.questions[i].answer_id, n_answers, rng))
            .collect();
        let needed: Vec<usize> = match hp.wrong_answers {
            WrongAnswerPolicy::All => (0..n_answers).collect(),
            WrongAnswerPolicy::Sample(_) => batch
                .iter()
                .zip(&wrong)
                .flat_map(|(&i, w)| std::iter::once(train.questions[i].answer_id).chain(w.iter().copied()))
                .collect(),
        };
        let mut bank = AnswerBank::encode(model, hp.loss_kind, &train.answers, needed)?;
        let mut grads = ModelGrads::zeros_for(model);
        let mut batch_loss = 0.0;
        for (&i, w) in batch.iter().zip(&wrong) {
            let q = &train.questions[i];
            let steps = model.question_len(q.token_ids.len());
            let mask: Option<Vec<Tensor>> = (drop > 0.0)
                .then(|| (0..steps).map(|_| dropout_mask(&[input_dim], drop, rng)).collect());
            let enc = model.encode_question(&q.token_ids, mask.as_deref())?;
            batch_loss += bank.accumulate(model, hp.loss_kind, &cfg, &enc, q.answer_id, w, &mut grads)?;
        }
        if !batch_loss.is_finite() {
            return Err(Error::NonFiniteLoss { batch: batch_idx });
        }
        bank.backward(model, &mut grads)?;
        if hp.batch_mean {
            grads.scale(1.0 / batch.len() as f64);
        }
        if let Some(max_norm) = hp.clip_norm {
            let norm = grads.norm();
            if norm > max_norm {
                grads.scale(max_norm / norm);
            }
        }
        state.step(model, &grads, hp)?;
        total += batch_loss;
    }
    Ok(EpochStats {
        mean_loss: total / train.len() as f64,
        examples: train.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn sampled_wrong_answers_exclude_correct() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for correct in 0..6 {
            let w = wrong_answers(WrongAnswerPolicy::Sample(3), correct, 6, &mut rng);
            assert_eq!(w.len(), 3);
            assert!(!w.contains(&correct));
            assert!(w.iter().all(|&a| a < 6));
        }
        let w = wrong_answers(WrongAnswerPolicy::Sample(10), 1, 3, &mut rng);
        assert_eq!(w, vec![0, 2]);
        assert_eq!(wrong_answers(WrongAnswerPolicy::All, 2, 4, &mut rng), vec![0, 1, 3]);
    }
}
