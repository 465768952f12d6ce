//! Mixup augmentation and weight averaging.

use alloc::vec::Vec;

use rand_distr::{Beta, Distribution};

use super::DomainBatch;
use crate::diffkit::{Embedding, Matrix, Model};
use crate::error::{Error, Result};
use crate::rng::{categorical, Stream};

/// Convex combination `λ a + (1 − λ) b`.
pub fn mix(a: &[f64], b: &[f64], lambda: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect()
}

/// Embedded inputs with soft targets; target rows already carry the example
/// weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub inputs: Matrix,
    pub targets: Matrix,
    pub lambdas: Vec<f64>,
}

/// Draws `n` mixed examples: both endpoints from the batch weights, the
/// mixing weight from `Beta(α, α)`. Example `s` uses `stream.at(s)`.
pub fn mixup_batch(
    embedding: &Embedding,
    batch: &DomainBatch,
    n_classes: usize,
    alpha: f64,
    n: usize,
    stream: &Stream,
) -> Result<MixedBatch> {
    if n == 0 {
        return Err(Error::EmptyRequest("mixup samples"));
    }
    let beta =
        Beta::new(alpha, alpha).map_err(|_| Error::InvalidParameter { name: "alpha", reason: "must be positive" })?;
    let emb = embedding.embed(&batch.xs);
    let d = emb.cols;
    let mut inputs = Matrix::zeros(n, d);
    let mut targets = Matrix::zeros(n, n_classes);
    let mut lambdas = Vec::with_capacity(n);
    let w = 1.0 / n as f64;
    for s in 0..n {
        let mut rng = stream.at(s as u64);
        let i = categorical(&mut rng, &batch.weights);
        let j = categorical(&mut rng, &batch.weights);
        let lam: f64 = beta.sample(&mut rng);
        inputs.data[s * d..(s + 1) * d].copy_from_slice(&mix(emb.row(i), emb.row(j), lam));
        targets.data[s * n_classes + batch.labels[i]] += w * lam;
        targets.data[s * n_classes + batch.labels[j]] += w * (1.0 - lam);
        lambdas.push(lam);
    }
    Ok(MixedBatch { inputs, targets, lambdas })
}

/// Parameterwise mean of same-shaped models.
pub fn swa_average(models: &[Model]) -> Result<Model> {
    if models.len() < 2 {
        return Err(Error::TooFewExamples { needed: 2, got: models.len() });
    }
    let first = &models[0];
    let shapes: Vec<(usize, usize)> = first.params().iter().map(|m| m.shape()).collect();
    for m in &models[1..] {
        let other: Vec<(usize, usize)> = m.params().iter().map(|p| p.shape()).collect();
        if other != shapes || m.embedding != first.embedding {
            return Err(Error::ShapeMismatch {
                what: "checkpoint parameters",
                expected: first.param_count(),
                found: m.param_count(),
            });
        }
    }
    let mut sum = alloc::vec![0.0; first.param_count()];
    for m in models {
        for (s, v) in sum.iter_mut().zip(m.flat()) {
            *s += v;
        }
    }
    let k = models.len() as f64;
    sum.iter_mut().for_each(|s| *s /= k);
    let mut out = first.clone();
    out.set_flat(&sum);
    Ok(out)
}
