use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::train::example_loss;
use crate::data::{Answer, AnswerSet, Question, PAD_ID};
use crate::error::Result;
use crate::loss::{LossConfig, LossKind};
use crate::model::{fit_length, Embeddings, FtsModel, ModelConfig, ModelGrads, OutputMode, Variant};
use crate::numeric::{numerical_gradient_richardson, Tensor};

/// Base step of the extrapolated central differences used by [`gradient_check`].
pub const GRADCHECK_STEP: f64 = 3e-4;


#[derive(Debug, Clone)]
pub struct GradCheckExample {
    pub question: Question,
    pub wrong: Vec<usize>,
    pub answers: AnswerSet,
    pub loss_kind: LossKind,
    pub loss: LossConfig,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max relative error per parameter tensor (embedding rows are reported one by one).
    pub groups: Vec<(String, f64)>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<(&str, f64)> {
        self.groups
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(n, e)| (n.as_str(), *e))
    }

    pub fn failures(&self) -> Vec<&str> {
        self.groups
            .iter()
            .filter(|(_, e)| !(*e < self.tolerance))
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / (1e-8f64).max(a.abs() + n.abs())
}

fn max_rel(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}

/// Check the model's analytic gradients for one example against central differences.
/// Dropout is not applied.
pub fn gradient_check(model: &FtsModel, example: &GradCheckExample, tolerance: f64) -> Result<GradCheckReport> {
    let (_, analytic) = example_loss(
        model,
        &example.question,
        &example.wrong,
        &example.answers,
        example.loss_kind,
        &example.loss,
        None,
    )?;
    compare_gradients(model, example, &analytic, tolerance)
}

/// Compare supplied gradients against central differences of the example's loss.
pub fn compare_gradients(
    model: &FtsModel,
    example: &GradCheckExample,
    analytic: &ModelGrads,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let loss_of = |m: &FtsModel| {
        example_loss(
            m,
            &example.question,
            &example.wrong,
            &example.answers,
            example.loss_kind,
            &example.loss,
            None,
        )
        .map(|(v, _)| v)
        .unwrap_or(f64::NAN)
    };

    let mut groups = Vec::new();
    let analytic_named = analytic.named();
    for (k, (name, param)) in model.named().into_iter().enumerate() {
        let numeric = numerical_gradient_richardson(
            |t| {
                let mut m = model.clone();
                *m.named_mut()[k].1 = t.clone();
                loss_of(&m)
            },
            param,
            GRADCHECK_STEP,
        )?;
        groups.push((name, max_rel(analytic_named[k].1.as_slice(), numeric.as_slice())));
    }

    let mut rows: BTreeSet<usize> = analytic.embeddings.keys().copied().collect();
    rows.extend(model.encode_question(&example.question.token_ids, None)?.token_ids);
    let mut answer_ids = vec![example.question.answer_id];
    answer_ids.extend(&example.wrong);
    for id in answer_ids {
        let toks = &example.answers.answers[id].token_ids;
        match (model.variant(), model.config.seq_len) {
            (Variant::Shared, Some(t)) => rows.extend(fit_length(toks, t)),
            _ => rows.extend(toks.iter().copied()),
        }
    }
    for id in rows.into_iter().filter(|&id| model.embeddings.trainable[id]) {
        let row = Tensor::from_vec(model.embeddings.table.row(id).to_vec());
        let numeric = numerical_gradient_richardson(
            |t| {
                let mut m = model.clone();
                m.embeddings.table.row_mut(id).copy_from_slice(t.as_slice());
                loss_of(&m)
            },
            &row,
            GRADCHECK_STEP,
        )?;
        let zeros = Tensor::zeros_like(&row);
        let a = analytic.embeddings.get(&id).unwrap_or(&zeros);
        groups.push((format!("embeddings[{id}]"), max_rel(a.as_slice(), numeric.as_slice())));
    }

    let passed = groups.iter().all(|(_, e)| *e < tolerance);
    Ok(GradCheckReport {
        groups,
        tolerance,
        passed,
    })
}

/// A small random model and example: hidden size 2–4, input size 3, a question of 1–6
/// tokens and three answers of 1–2 tokens. Biases are randomized too.
pub fn random_instance(
    variant: Variant,
    output_mode: OutputMode,
    loss_kind: LossKind,
    seed: u64,
) -> Result<(FtsModel, GradCheckExample)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab_size = 10;
    let input_dim = 3;
    let hidden_dim = rng.gen_range(2..=4);
    let q_len = rng.gen_range(1..=6);
    let seq_len = (variant == Variant::Shared).then(|| rng.gen_range(1..=6));

    let embeddings = Embeddings {
        table: Tensor::from_shape(
            &[vocab_size, input_dim],
            (0..vocab_size * input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )?,
        trainable: vec![true; vocab_size],
    };
    let config = ModelConfig {
        variant,
        output_mode,
        hidden_dim,
        seq_len,
    };
    let mut model = FtsModel::new(config, embeddings, &mut rng)?;
    for (name, t) in model.named_mut() {
        if name.contains(".b_") || name.ends_with(".bias") {
            for v in t.as_mut_slice() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
    }

    let token = |rng: &mut ChaCha8Rng| rng.gen_range(PAD_ID + 1..vocab_size);
    // answers must differ as the encoder sees them, otherwise a hinge term is identically
    // zero and only round-off remains
    let seen = |ids: &[usize]| match seq_len {
        Some(t) => fit_length(ids, t),
        None => ids.to_vec(),
    };
    let mut answer_ids: Vec<Vec<usize>> = Vec::new();
    while answer_ids.len() < 3 {
        let len = rng.gen_range(1..=2);
        let ids: Vec<usize> = (0..len).map(|_| token(&mut rng)).collect();
        if answer_ids.iter().all(|a| seen(a) != seen(&ids)) {
            answer_ids.push(ids);
        }
    }
    let answers = AnswerSet {
        answers: answer_ids
            .into_iter()
            .enumerate()
            .map(|(id, token_ids)| Answer {
                id,
                phrase: format!("answer {id}"),
                tokens: token_ids.iter().map(|t| format!("t{t}")).collect(),
                token_ids,
            })
            .collect(),
    };
    let token_ids: Vec<usize> = (0..q_len).map(|_| token(&mut rng)).collect();
    let answer_id = rng.gen_range(0..3);
    let question = Question {
        sentences: vec![],
        tokens: token_ids.iter().map(|t| format!("t{t}")).collect(),
        token_ids,
        answer_id,
    };
    let example = GradCheckExample {
        wrong: (0..3).filter(|&a| a != answer_id).collect(),
        question,
        answers,
        loss_kind,
        loss: LossConfig::default(),
    };
    Ok((model, example))
}
