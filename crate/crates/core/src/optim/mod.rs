//! Initialization, dropout, RMSProp with momentum, the training loop and gradient checks.

mod gradcheck;
mod train;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{LossConfig, LossKind, WrongAnswerPolicy};
use crate::model::{FtsModel, ModelGrads};
use crate::numeric::Tensor;

pub use gradcheck::{
    compare_gradients, gradient_check, random_instance, GradCheckExample, GradCheckReport,
    GRADCHECK_STEP,
};
pub use train::{example_loss, train_epoch, EpochStats};

/// How `dropout_rate` is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropoutConvention {
    /// The rate is the probability of zeroing an input.
    Drop,
    /// The rate is the probability of keeping an input.
    Keep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub momentum: f64,
    pub rms_decay: f64,
    pub epsilon: f64,
    pub dropout_rate: f64,
    pub dropout_convention: DropoutConvention,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub margin: f64,
    pub train_embeddings: bool,
    pub loss_kind: LossKind,
    pub wrong_answers: WrongAnswerPolicy,
    /// Average accumulated gradients over the batch (otherwise sum).
    pub batch_mean: bool,
    /// Rescale the batch gradient to at most this L2 norm.
    pub clip_norm: Option<f64>,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            learning_rate: 0.002,
            momentum: 0.8,
            rms_decay: 0.9,
            epsilon: 1e-6,
            dropout_rate: 0.7,
            dropout_convention: DropoutConvention::Drop,
            epochs: 100,
            batch_size: 32,
            seed: 1,
            margin: 1.0,
            train_embeddings: false,
            loss_kind: LossKind::FullTime,
            wrong_answers: WrongAnswerPolicy::All,
            batch_mean: true,
            clip_norm: None,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| {
            Err(Error::Config {
                key: key.into(),
                msg: msg.into(),
            })
        };
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("lr", "must be a non-negative finite number");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must lie in [0, 1)");
        }
        if !(self.rms_decay > 0.0 && self.rms_decay < 1.0) {
            return bad("rms-decay", "must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", "must be positive");
        }
        if !(0.0..1.0).contains(&self.drop_probability()) {
            return bad("dropout", "drop probability must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch-size", "must be at least 1");
        }
        if !(self.margin > 0.0) {
            return bad("margin", "must be positive");
        }
        if let WrongAnswerPolicy::Sample(0) = self.wrong_answers {
            return bad("wrong-answers", "sample size must be at least 1");
        }
        Ok(())
    }

    /// Probability of zeroing an input under the configured convention.
    pub fn drop_probability(&self) -> f64 {
        match self.dropout_convention {
            DropoutConvention::Drop => self.dropout_rate,
            DropoutConvention::Keep => 1.0 - self.dropout_rate,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            margin: self.margin,
            wrong_answers: self.wrong_answers,
        }
    }
}

/// I.i.d. uniform samples in `±√(6/(cols + rows))`; `cols` is the input size and `rows`
/// the output size (`cols = 1` for vectors).
pub fn init_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let a = init_bound(rows, cols);
    let values = (0..rows * cols).map(|_| rng.gen_range(-a..=a)).collect();
    Tensor::from_shape(&[rows, cols], values).expect("positive dims")
}

pub fn init_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

/// Inverted-dropout scale factors: `0` with probability `rate`, `1/(1 − rate)` otherwise.
pub fn dropout_mask<R: Rng + ?Sized>(dims: &[usize], rate: f64, rng: &mut R) -> Tensor {
    let keep = 1.0 / (1.0 - rate);
    let mut m = Tensor::zeros(dims);
    for v in m.as_mut_slice() {
        *v = if rng.gen::<f64>() < rate { 0.0 } else { keep };
    }
    m
}

/// Returns the (possibly) dropped-out tensor and the mask that was applied. Inference, or
/// a zero rate, is the identity with a mask of ones and draws nothing from `rng`.
pub fn apply_dropout<R: Rng + ?Sized>(x: &Tensor, rate: f64, rng: &mut R, training: bool) -> (Tensor, Tensor) {
    assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1)");
    if !training || rate == 0.0 {
        return (x.clone(), Tensor::filled(x.dims(), 1.0));
    }
    let mask = dropout_mask(x.dims(), rate, rng);
    let y = crate::numeric::hadamard(x, &mask).expect("same dims");
    (y, mask)
}

/// Per-tensor optimizer accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub rms: Tensor,
    pub velocity: Tensor,
}

impl Slot {
    pub fn zeros_like(t: &Tensor) -> Self {
        Slot {
            rms: Tensor::zeros_like(t),
            velocity: Tensor::zeros_like(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub slots: BTreeMap<String, Slot>,
    /// Dense accumulators for the embedding table; only trainable rows are touched.
    pub embeddings: Option<Slot>,
    pub step_count: u64,
}

fn update_elems(rms: &mut [f64], vel: &mut [f64], param: &mut [f64], grad: &[f64], hp: &HyperParams) {
    let (rho, mu, lr, eps) = (hp.rms_decay, hp.momentum, hp.learning_rate, hp.epsilon);
    for i in 0..param.len() {
        let g = grad[i];
        rms[i] = rho * rms[i] + (1.0 - rho) * g * g;
        vel[i] = mu * vel[i] - lr * g / (rms[i] + eps).sqrt();
        param[i] += vel[i];
    }
}

/// `rms ← ρ·rms + (1−ρ)·g²; v ← μ·v − lr·g/√(rms+ε); param ← param + v`.
pub fn rmsprop_momentum_step(
    slot: &mut Slot,
    name: &str,
    param: &mut Tensor,
    grad: &Tensor,
    hp: &HyperParams,
) -> Result<()> {
    if param.dims() != grad.dims() || slot.rms.dims() != param.dims() {
        return Err(Error::shape("rmsprop_momentum_step", param.dims(), grad.dims()));
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite {
            what: "gradient",
            name: name.to_string(),
        });
    }
    update_elems(
        slot.rms.as_mut_slice(),
        slot.velocity.as_mut_slice(),
        param.as_mut_slice(),
        grad.as_slice(),
        hp,
    );
    Ok(())
}

impl OptimizerState {
    /// One update of every trainable tensor. Nothing is modified if any gradient is
    /// non-finite.
    pub fn step(&mut self, model: &mut FtsModel, grads: &ModelGrads, hp: &HyperParams) -> Result<()> {
        for (name, g) in grads.named() {
            if !g.is_finite() {
                return Err(Error::NonFinite { what: "gradient", name });
            }
        }
        for (id, g) in &grads.embeddings {
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    what: "gradient",
                    name: format!("embeddings[{id}]"),
                });
            }
        }
        for ((name, param), (_, grad)) in model.named_mut().into_iter().zip(grads.named()) {
            let slot = self
                .slots
                .entry(name.clone())
                .or_insert_with(|| Slot::zeros_like(param));
            rmsprop_momentum_step(slot, &name, param, grad, hp)?;
        }

        let emb = &mut model.embeddings;
        if emb.trainable.iter().any(|&t| t) {
            let slot = self
                .embeddings
                .get_or_insert_with(|| Slot::zeros_like(&emb.table));
            let dim = emb.table.cols();
            let zero = vec![0.0; dim];
            for (id, &trainable) in emb.trainable.iter().enumerate() {
                if !trainable {
                    continue;
                }
                let g = grads.embeddings.get(&id).map_or(&zero[..], |t| t.as_slice());
                let range = id * dim..(id + 1) * dim;
                update_elems(
                    &mut slot.rms.as_mut_slice()[range.clone()],
                    &mut slot.velocity.as_mut_slice()[range.clone()],
                    &mut emb.table.as_mut_slice()[range],
                    g,
                    hp,
                );
            }
        }
        self.step_count += 1;
        Ok(())
    }
}
