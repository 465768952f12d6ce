use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Graph, Var};

pub fn sgd_step(params: &mut [f64], grad: &[f64], lr: f64) {
    assert_eq!(params.len(), grad.len(), "gradient length");
    for (p, g) in params.iter_mut().zip(grad) {
        *p -= lr * g;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self::with_betas(n, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }
}

pub fn adam_step(params: &mut [f64], state: &mut AdamState, grad: &[f64], lr: f64) {
    assert_eq!(params.len(), grad.len(), "gradient length");
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - libm::pow(state.beta1, t as f64);
    let c2 = 1.0 - libm::pow(state.beta2, t as f64);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (libm::sqrt(v_hat) + state.eps);
    }
}

/// Compares reverse-mode gradients with central differences.
///
/// `build` receives a flat parameter vector, records the loss on the graph
/// and returns it together with the parameter leaves in the same flat order.
/// Returns `max |analytic − numeric| / (|analytic| + 1e-8)`.
pub fn finite_diff_check<F>(params: &[f64], eps: f64, build: F) -> f64
where
    F: Fn(&[f64], &mut Graph) -> (Var, Vec<Var>),
{
    let mut g = Graph::new();
    let (loss, leaves) = build(params, &mut g);
    let grads = g.grad(loss, &leaves);
    let analytic: Vec<f64> = grads.iter().flat_map(|&v| g.value(v).data.clone()).collect();
    assert_eq!(analytic.len(), params.len(), "leaves must cover the parameter vector");

    let eval = |p: &[f64]| {
        let mut g = Graph::new();
        let (loss, _) = build(p, &mut g);
        g.scalar(loss)
    };
    let mut worst: f64 = 0.0;
    let mut p = params.to_vec();
    for i in 0..params.len() {
        p[i] = params[i] + eps;
        let up = eval(&p);
        p[i] = params[i] - eps;
        let down = eval(&p);
        p[i] = params[i];
        let numeric = (up - down) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + 1e-8);
        if err > worst || err.is_nan() {
            worst = err;
        }
    }
    worst
}
