//! Full-time supervised bidirectional GRU encoders for factoid question answering.
//!
//! Questions are encoded by a bidirectional GRU whose per-step outputs are combined by
//! an affine output layer (or concatenated). During training a margin loss is applied to
//! the output at every time step against the correct answer and every wrong answer. At
//! test time the per-step outputs are average-pooled and answers are picked either by the
//! largest inner product or by a logistic-regression head trained on the pooled
//! representations.
//!
//! Two model variants are provided:
//!
//! - [`Variant::Fts`]: a unidirectional GRU encodes answers; its last hidden state is the
//!   answer representation.
//! - [`Variant::Shared`]: the question encoder is reused for answers, which are padded to a
//!   fixed sequence length, and the loss pairs question and answer outputs step by step.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod cli;
pub mod data;
pub mod error;
pub mod gru;
pub mod infer;
pub mod loss;
pub mod model;
pub mod numeric;
pub mod optim;

pub use error::{Error, Result};
pub use model::{FtsModel, ModelConfig, OutputMode, Variant};
pub use numeric::Tensor;
