use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, Matrix, Var};
use crate::error::{Error, Result};
use crate::oracle::PredictorTable;

/// Fixed map from discrete observation index to an input vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Embedding {
    OneHot { n_obs: usize },
    Table { rows: Vec<Vec<f64>> },
}

impl Embedding {
    pub fn n_obs(&self) -> usize {
        match self {
            Embedding::OneHot { n_obs } => *n_obs,
            Embedding::Table { rows } => rows.len(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Embedding::OneHot { n_obs } => *n_obs,
            Embedding::Table { rows } => rows.first().map_or(0, Vec::len),
        }
    }

    pub fn embed(&self, xs: &[usize]) -> Matrix {
        let d = self.dim();
        let mut m = Matrix::zeros(xs.len(), d);
        for (r, &x) in xs.iter().enumerate() {
            match self {
                Embedding::OneHot { .. } => m.set(r, x, 1.0),
                Embedding::Table { rows } => m.data[r * d..(r + 1) * d].copy_from_slice(&rows[x]),
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, v: Var) -> Var {
        match self {
            Activation::Relu => g.relu(v),
            Activation::Tanh => g.tanh(v),
        }
    }
}

/// `[x, 1] · w` — a dense layer with the bias stored as the last row.
pub fn dense(g: &mut Graph, x: Var, w: Var) -> Var {
    let xb = g.append_ones(x);
    g.matmul(xb, w)
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`, bias row zero.
pub fn xavier<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Matrix {
    let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    let mut m = Matrix::zeros(fan_in + 1, fan_out);
    for v in &mut m.data[..fan_in * fan_out] {
        *v = rng.random_range(-bound..=bound);
    }
    m
}

fn flatten(mats: &[&Matrix]) -> Vec<f64> {
    mats.iter().flat_map(|m| m.data.iter().copied()).collect()
}

fn unflatten(mats: &mut [&mut Matrix], flat: &[f64]) {
    let total: usize = mats.iter().map(|m| m.len()).sum();
    assert_eq!(total, flat.len(), "parameter count");
    let mut at = 0;
    for m in mats {
        let n = m.len();
        m.data.copy_from_slice(&flat[at..at + n]);
        at += n;
    }
}

/// Feature extractor `f_φ` (dense layers, each followed by the activation)
/// plus a linear head `g_w`. `H` is the output of the last extractor layer;
/// with no extractor layers it is the embedding itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub embedding: Embedding,
    pub activation: Activation,
    pub layers: Vec<Matrix>,
    /// `[u_count + 1 × n_classes]`, last row is the bias unit.
    pub head: Matrix,
}

/// Parameter leaves of a model bound to a graph, in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelVars {
    pub layers: Vec<Var>,
    pub head: Var,
}

impl ModelVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v = self.layers.clone();
        v.push(self.head);
        v
    }
}

/// One recorded forward pass.
#[derive(Debug, Clone)]
pub struct Pass {
    pub tape: Graph,
    pub params: ModelVars,
    pub input: Var,
    pub features: Var,
    pub logits: Var,
    pub log_probs: Var,
}

impl Pass {
    pub fn probabilities(&self) -> Matrix {
        self.tape.value(self.log_probs).map(libm::exp)
    }
}

impl Model {
    pub fn new<R: Rng>(
        embedding: Embedding,
        hidden: &[usize],
        n_classes: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut width = embedding.dim();
        for &h in hidden {
            layers.push(xavier(rng, width, h));
            width = h;
        }
        let head = xavier(rng, width, n_classes);
        Self { embedding, activation, layers, head }
    }

    pub fn n_classes(&self) -> usize {
        self.head.cols
    }

    pub fn feature_dim(&self) -> usize {
        self.head.rows - 1
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut v: Vec<&Matrix> = self.layers.iter().collect();
        v.push(&self.head);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v: Vec<&mut Matrix> = self.layers.iter_mut().collect();
        v.push(&mut self.head);
        v
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|m| m.len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.params())
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        unflatten(&mut self.params_mut(), flat);
    }

    pub fn bind(&self, g: &mut Graph) -> ModelVars {
        ModelVars { layers: self.layers.iter().map(|w| g.leaf(w.clone())).collect(), head: g.leaf(self.head.clone()) }
    }

    pub fn features(&self, g: &mut Graph, vars: &ModelVars, input: Var) -> Var {
        vars.layers.iter().fold(input, |h, &w| {
            let z = dense(g, h, w);
            self.activation.apply(g, z)
        })
    }

    pub fn logits(&self, g: &mut Graph, vars: &ModelVars, features: Var) -> Var {
        dense(g, features, vars.head)
    }

    /// Records a forward pass over embedded observations on an existing graph.
    pub fn record(&self, g: &mut Graph, vars: &ModelVars, xs: &[usize]) -> (Var, Var, Var) {
        let input = g.leaf(self.embedding.embed(xs));
        let h = self.features(g, vars, input);
        let z = self.logits(g, vars, h);
        (input, h, z)
    }

    pub fn forward(&self, xs: &[usize]) -> Result<Pass> {
        if xs.is_empty() {
            return Err(Error::EmptyRequest("forward batch"));
        }
        if let Some(&x) = xs.iter().find(|&&x| x >= self.embedding.n_obs()) {
            return Err(Error::IndexOutOfRange { what: "observation", index: x, bound: self.embedding.n_obs() });
        }
        let mut tape = Graph::new();
        let params = self.bind(&mut tape);
        let (input, features, logits) = self.record(&mut tape, &params, xs);
        if !tape.value(features).is_finite() {
            return Err(Error::NonFiniteActivation("features"));
        }
        if !tape.value(logits).is_finite() {
            return Err(Error::NonFiniteActivation("logits"));
        }
        let log_probs = tape.log_softmax(logits);
        Ok(Pass { tape, params, input, features, logits, log_probs })
    }

    /// Class probabilities for each observation in `xs`.
    pub fn predict(&self, xs: &[usize]) -> Result<Matrix> {
        Ok(self.forward(xs)?.probabilities())
    }

    /// Tabulates the model over every observation index.
    pub fn predictor_table(&self) -> Result<PredictorTable> {
        let xs: Vec<usize> = (0..self.embedding.n_obs()).collect();
        let p = self.predict(&xs)?;
        PredictorTable::from_flat(p.rows, p.cols, p.data, 1e-9)
    }
}

/// Flat gradient of `loss` with respect to the bound model parameters, in
/// canonical order.
pub fn backward(tape: &mut Graph, loss: Var, params: &ModelVars) -> Vec<f64> {
    let grads = tape.grad(loss, &params.all());
    grads.iter().flat_map(|&g| tape.value(g).data.clone()).collect()
}

/// Small multilayer perceptron with a linear output layer (used for domain
/// adversaries).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub activation: Activation,
    pub layers: Vec<Matrix>,
}

impl Mlp {
    /// `dims = [input, hidden…, output]`.
    pub fn new<R: Rng>(dims: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        Self { activation, layers: dims.windows(2).map(|w| xavier(rng, w[0], w[1])).collect() }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Matrix::len).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers.iter().collect::<Vec<_>>())
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        unflatten(&mut self.layers.iter_mut().collect::<Vec<_>>(), flat);
    }

    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.layers.iter().map(|w| g.leaf(w.clone())).collect()
    }

    pub fn record(&self, g: &mut Graph, vars: &[Var], input: Var) -> Var {
        let last = vars.len() - 1;
        vars.iter().enumerate().fold(input, |h, (i, &w)| {
            let z = dense(g, h, w);
            if i == last {
                z
            } else {
                self.activation.apply(g, z)
            }
        })
    }
}
