//! Minimal reverse-mode differentiation and the feature-extractor/linear-head
//! model built on it.

mod graph;
mod matrix;
mod model;
mod optim;

pub use graph::{Graph, Var};
pub use matrix::Matrix;
pub use model::{backward, dense, xavier, Activation, Embedding, Mlp, Model, ModelVars, Pass};
pub use optim::{adam_step, finite_diff_check, sgd_step, AdamState};

/// The recorded computation of a forward pass.
pub type Tape = Graph;
