//! Margin ranking losses over question outputs and answer representations.
//!
//! Every loss here is a sum of hinge terms `max(0, margin − o·a_correct + o·a_wrong)`.
//! They differ in which question vector `o` is used (each time step, or the average of all
//! steps) and which answer vector is paired with it. A hinge whose argument is exactly zero
//! contributes no gradient.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Hinge terms at every time step.
    FullTime,
    /// Hinge terms on the average-pooled question representation only.
    Pooling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WrongAnswerPolicy {
    All,
    /// Draw `k` wrong answers per question with the training RNG.
    Sample(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub margin: f64,
    pub wrong_answers: WrongAnswerPolicy,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 1.0,
            wrong_answers: WrongAnswerPolicy::All,
        }
    }
}

/// Loss value plus gradients w.r.t. each input.
///
/// Answer gradients are per step: a single-vector answer representation has a
/// one-element list.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad_outputs: Vec<Tensor>,
    pub grad_correct: Vec<Tensor>,
    pub grad_wrong: BTreeMap<usize, Vec<Tensor>>,
}

impl LossResult {
    fn zeros(outputs: &[Tensor], correct_steps: usize, wrong: &[usize], dim: usize) -> Self {
        LossResult {
            value: 0.0,
            grad_outputs: outputs.iter().map(Tensor::zeros_like).collect(),
            grad_correct: vec![Tensor::zeros(&[dim]); correct_steps],
            grad_wrong: wrong
                .iter()
                .map(|&id| (id, vec![Tensor::zeros(&[dim]); correct_steps]))
                .collect(),
        }
    }
}

fn check_dims(outputs: &[Tensor], vectors: &[&Tensor]) -> Result<usize> {
    let first = outputs.first().ok_or(Error::EmptyInput("loss outputs"))?;
    let d = first.len();
    for t in outputs.iter().chain(vectors.iter().copied()) {
        if t.len() != d || t.dims().len() != 1 {
            return Err(Error::shape("loss", first.dims(), t.dims()));
        }
    }
    Ok(d)
}

fn add_scaled(dst: &mut Tensor, alpha: f64, src: &[f64]) {
    for (a, b) in dst.as_mut_slice().iter_mut().zip(src) {
        *a += alpha * b;
    }
}

/// `o·(w − c)`, differencing first so components where `w` and `c` agree cancel exactly.
fn dot_diff(o: &[f64], w: &[f64], c: &[f64]) -> f64 {
    o.iter().zip(w.iter().zip(c)).fold(0.0, |acc, (o, (w, c))| acc + o * (w - c))
}

fn add_diff(dst: &mut Tensor, w: &[f64], c: &[f64]) {
    for (a, (w, c)) in dst.as_mut_slice().iter_mut().zip(w.iter().zip(c)) {
        *a += w - c;
    }
}

fn warn_no_wrong() {
    log::warn!("margin loss called with no wrong answers; loss is 0");
}

/// `Σ_t Σ_w max(0, margin − o_t·a_correct + o_t·a_w)`.
pub fn full_time_loss(
    outputs: &[Tensor],
    correct: &Tensor,
    wrong: &[(usize, &Tensor)],
    cfg: &LossConfig,
) -> Result<LossResult> {
    let mut all = vec![correct];
    all.extend(wrong.iter().map(|(_, a)| *a));
    let d = check_dims(outputs, &all)?;
    let ids: Vec<usize> = wrong.iter().map(|(id, _)| *id).collect();
    let mut res = LossResult::zeros(outputs, 1, &ids, d);
    if wrong.is_empty() {
        warn_no_wrong();
        return Ok(res);
    }
    for (t, o) in outputs.iter().enumerate() {
        let o = o.as_slice();
        for (id, a) in wrong {
            let arg = cfg.margin + dot_diff(o, a.as_slice(), correct.as_slice());
            if arg.is_nan() {
                res.value = f64::NAN;
            } else if arg > 0.0 {
                res.value += arg;
                add_diff(&mut res.grad_outputs[t], a.as_slice(), correct.as_slice());
                add_scaled(&mut res.grad_correct[0], -1.0, o);
                add_scaled(&mut res.grad_wrong.get_mut(id).unwrap()[0], 1.0, o);
            }
        }
    }
    Ok(res)
}

/// Hinge loss on the average of the per-step outputs; the pooled gradient is spread
/// evenly (`1/T`) back to every step.
pub fn pooling_loss(
    outputs: &[Tensor],
    correct: &Tensor,
    wrong: &[(usize, &Tensor)],
    cfg: &LossConfig,
) -> Result<LossResult> {
    let mut all = vec![correct];
    all.extend(wrong.iter().map(|(_, a)| *a));
    let d = check_dims(outputs, &all)?;
    let ids: Vec<usize> = wrong.iter().map(|(id, _)| *id).collect();
    let mut res = LossResult::zeros(outputs, 1, &ids, d);
    if wrong.is_empty() {
        warn_no_wrong();
        return Ok(res);
    }
    let steps = outputs.len() as f64;
    let mut pooled = Tensor::zeros(&[d]);
    for o in outputs {
        pooled.add_assign(o)?;
    }
    for v in pooled.as_mut_slice() {
        *v /= steps;
    }
    let p = pooled.as_slice();
    let mut grad_pooled = Tensor::zeros(&[d]);
    for (id, a) in wrong {
        let arg = cfg.margin + dot_diff(p, a.as_slice(), correct.as_slice());
        if arg.is_nan() {
            res.value = f64::NAN;
        } else if arg > 0.0 {
            res.value += arg;
            add_diff(&mut grad_pooled, a.as_slice(), correct.as_slice());
            add_scaled(&mut res.grad_correct[0], -1.0, p);
            add_scaled(&mut res.grad_wrong.get_mut(id).unwrap()[0], 1.0, p);
        }
    }
    for g in &mut res.grad_outputs {
        add_scaled(g, 1.0 / steps, grad_pooled.as_slice());
    }
    Ok(res)
}

/// Step-paired loss for the shared encoder:
/// `Σ_t Σ_w max(0, margin − o_t·c_t + o_t·w_t)`.
pub fn full_time_loss_shared(
    outputs: &[Tensor],
    correct: &[Tensor],
    wrong: &[(usize, &[Tensor])],
    cfg: &LossConfig,
) -> Result<LossResult> {
    let steps = outputs.len();
    if correct.len() != steps {
        return Err(Error::shape("full_time_loss_shared", steps, correct.len()));
    }
    for (_, w) in wrong {
        if w.len() != steps {
            return Err(Error::shape("full_time_loss_shared", steps, w.len()));
        }
    }
    let all: Vec<&Tensor> = correct
        .iter()
        .chain(wrong.iter().flat_map(|(_, w)| w.iter()))
        .collect();
    let d = check_dims(outputs, &all)?;
    let ids: Vec<usize> = wrong.iter().map(|(id, _)| *id).collect();
    let mut res = LossResult::zeros(outputs, steps, &ids, d);
    if wrong.is_empty() {
        warn_no_wrong();
        return Ok(res);
    }
    for (t, o) in outputs.iter().enumerate() {
        let o = o.as_slice();
        for (id, w) in wrong {
            let arg = cfg.margin + dot_diff(o, w[t].as_slice(), correct[t].as_slice());
            if arg.is_nan() {
                res.value = f64::NAN;
            } else if arg > 0.0 {
                res.value += arg;
                add_diff(&mut res.grad_outputs[t], w[t].as_slice(), correct[t].as_slice());
                add_scaled(&mut res.grad_correct[t], -1.0, o);
                add_scaled(&mut res.grad_wrong.get_mut(id).unwrap()[t], 1.0, o);
            }
        }
    }
    Ok(res)
}
