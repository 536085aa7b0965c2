//! Test-time representations and answer selection.
//!
//! A question is represented by the mean of its per-step outputs. Answers are chosen by
//! the largest inner product with the answer representations, or by a multinomial
//! logistic-regression head trained on pooled training-question representations.

use serde::{Deserialize, Serialize};

use crate::data::{AnswerSet, Dataset};
use crate::error::{Error, Result};
use crate::model::{FtsModel, Variant};
use crate::numeric::{dot, dot_slices, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMethod {
    #[serde(rename = "innerp")]
    InnerProduct,
    Lr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepSource {
    Question(usize),
    Answer(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledRep {
    pub vec: Tensor,
    pub source: RepSource,
}

/// Elementwise mean of the per-step vectors.
pub fn average_pool(outputs: &[Tensor]) -> Result<Tensor> {
    let first = outputs.first().ok_or(Error::EmptyInput("average_pool"))?;
    let mut acc = Tensor::zeros_like(first);
    for o in outputs {
        acc.add_assign(o)?;
    }
    let n = outputs.len() as f64;
    for v in acc.as_mut_slice() {
        *v /= n;
    }
    Ok(acc)
}

/// Answers ordered by descending score, ties by ascending id.
pub fn rank_by_score(scores: impl IntoIterator<Item = (usize, f64)>) -> Vec<(usize, f64)> {
    let mut v: Vec<(usize, f64)> = scores.into_iter().collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v
}

fn argmax(scores: impl IntoIterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (id, s) in scores {
        best = match best {
            Some((bid, bs)) if bs > s || (bs == s && bid < id) => Some((bid, bs)),
            _ => Some((id, s)),
        };
    }
    best.map(|(id, _)| id)
}

pub fn inner_product_scores(q: &Tensor, answers: &[(usize, Tensor)]) -> Result<Vec<(usize, f64)>> {
    answers.iter().map(|(id, a)| Ok((*id, dot(q, a)?))).collect()
}

/// `argmax_i q·a_i`, ties to the smallest answer id.
pub fn predict_inner_product(q: &Tensor, answers: &[(usize, Tensor)]) -> Result<usize> {
    argmax(inner_product_scores(q, answers)?).ok_or(Error::EmptyInput("answer list"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrConfig {
    pub l2: f64,
    pub iterations: usize,
    /// Stop once the gradient norm falls below this.
    pub tolerance: f64,
}

impl Default for LrConfig {
    fn default() -> Self {
        LrConfig {
            l2: 1e-4,
            iterations: 500,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrModel {
    /// `[classes × dim]`
    pub weights: Tensor,
    pub bias: Tensor,
}

impl LrModel {
    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn logits(&self, q: &Tensor) -> Result<Tensor> {
        crate::numeric::affine(&self.weights, q, &self.bias)
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Softmax regression by full-batch gradient descent on mean cross-entropy plus
/// `l2/2 · ‖W‖²`, starting from zero. The step size is the inverse of a Lipschitz bound
/// on the gradient, `½·mean(‖x‖² + 1) + l2`.
pub fn train_lr(reps: &[(Tensor, usize)], num_classes: usize, cfg: &LrConfig) -> Result<LrModel> {
    if num_classes < 2 {
        return Err(Error::Model("logistic regression needs at least two classes".into()));
    }
    let (first, _) = reps.first().ok_or(Error::EmptyInput("logistic regression examples"))?;
    let dim = first.len();
    for (x, y) in reps {
        if x.len() != dim {
            return Err(Error::shape("train_lr", x.dims(), [dim]));
        }
        if *y >= num_classes {
            return Err(Error::Model(format!("label {y} outside {num_classes} classes")));
        }
    }
    if reps.iter().all(|(_, y)| *y == reps[0].1) {
        log::warn!("logistic regression trained on a single label");
    }
    let n = reps.len() as f64;
    let lipschitz = 0.5 * reps.iter().map(|(x, _)| x.norm().powi(2) + 1.0).sum::<f64>() / n + cfg.l2;
    let step = 1.0 / lipschitz;

    let mut w = Tensor::zeros(&[num_classes, dim]);
    let mut b = Tensor::zeros(&[num_classes]);
    let mut probs = vec![0.0; num_classes];
    for _ in 0..cfg.iterations {
        let mut gw = Tensor::zeros(&[num_classes, dim]);
        let mut gb = Tensor::zeros(&[num_classes]);
        for (x, y) in reps {
            for (c, p) in probs.iter_mut().enumerate() {
                *p = dot_slices(w.row(c), x.as_slice()) + b.as_slice()[c];
            }
            softmax_in_place(&mut probs);
            probs[*y] -= 1.0;
            for (c, &err) in probs.iter().enumerate() {
                gb.as_mut_slice()[c] += err / n;
                for (g, xi) in gw.row_mut(c).iter_mut().zip(x.as_slice()) {
                    *g += err * xi / n;
                }
            }
        }
        gw.axpy(cfg.l2, &w)?;
        let gnorm = (gw.norm().powi(2) + gb.norm().powi(2)).sqrt();
        if gnorm < cfg.tolerance {
            break;
        }
        w.axpy(-step, &gw)?;
        b.axpy(-step, &gb)?;
    }
    Ok(LrModel { weights: w, bias: b })
}

/// Class with the largest logit, ties to the smallest id.
pub fn predict_lr(m: &LrModel, q: &Tensor) -> Result<usize> {
    let logits = m.logits(q)?;
    argmax(logits.as_slice().iter().copied().enumerate()).ok_or(Error::EmptyInput("classes"))
}

/// Pooled output of every question (no dropout).
pub fn question_reps(model: &FtsModel, data: &Dataset) -> Result<Vec<PooledRep>> {
    data.questions
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let enc = model.encode_question(&q.token_ids, None)?;
            Ok(PooledRep {
                vec: average_pool(&enc.outputs)?,
                source: RepSource::Question(i),
            })
        })
        .collect()
}

/// Last answer-GRU state for the separate encoder; average of the per-step outputs for
/// the shared encoder.
pub fn answer_reps(model: &FtsModel, answers: &AnswerSet) -> Result<Vec<PooledRep>> {
    answers
        .answers
        .iter()
        .map(|a| {
            let vec = match model.variant() {
                Variant::Fts => model.encode_answer(&a.token_ids)?.reps.remove(0),
                Variant::Shared => {
                    let steps = model.config.seq_len.unwrap_or(1);
                    average_pool(&model.encode_answer_shared(&a.token_ids, steps)?.reps)?
                }
            };
            Ok(PooledRep {
                vec,
                source: RepSource::Answer(a.id),
            })
        })
        .collect()
}

/// Fit the logistic-regression head on pooled training-question representations.
pub fn fit_lr_head(model: &FtsModel, train: &Dataset, cfg: &LrConfig) -> Result<LrModel> {
    let reps = question_reps(model, train)?;
    let labelled: Vec<(Tensor, usize)> = reps
        .into_iter()
        .zip(&train.questions)
        .map(|(r, q)| (r.vec, q.answer_id))
        .collect();
    train_lr(&labelled, train.answers.len(), cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub index: usize,
    pub truth: usize,
    pub predicted: usize,
    /// Best-first answer ids.
    pub ranked: Vec<usize>,
}

pub fn predict_all(
    model: &FtsModel,
    data: &Dataset,
    method: EvalMethod,
    lr: Option<&LrModel>,
) -> Result<Vec<Prediction>> {
    let lr = match method {
        EvalMethod::Lr => Some(lr.ok_or_else(|| Error::Model("LR evaluation needs a trained LR head".into()))?),
        EvalMethod::InnerProduct => None,
    };
    let answers: Vec<(usize, Tensor)> = match lr {
        None => answer_reps(model, &data.answers)?
            .into_iter()
            .map(|r| match r.source {
                RepSource::Answer(id) => (id, r.vec),
                RepSource::Question(_) => unreachable!(),
            })
            .collect(),
        Some(_) => Vec::new(),
    };
    let reps = question_reps(model, data)?;
    reps.iter()
        .zip(&data.questions)
        .enumerate()
        .map(|(index, (rep, q))| {
            let scores = match lr {
                Some(m) => m.logits(&rep.vec)?.as_slice().iter().copied().enumerate().collect(),
                None => inner_product_scores(&rep.vec, &answers)?,
            };
            let ranked: Vec<usize> = rank_by_score(scores).into_iter().map(|(id, _)| id).collect();
            Ok(Prediction {
                index,
                truth: q.answer_id,
                predicted: ranked[0],
                ranked,
            })
        })
        .collect()
}

/// Fraction of questions whose predicted answer is correct.
pub fn evaluate(model: &FtsModel, data: &Dataset, method: EvalMethod, lr: Option<&LrModel>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("evaluation"));
    }
    let preds = predict_all(model, data, method, lr)?;
    let hits = preds.iter().filter(|p| p.predicted == p.truth).count();
    Ok(hits as f64 / preds.len() as f64)
}
