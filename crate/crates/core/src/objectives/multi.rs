//! Penalties comparing risks or gradients across domains.

use alloc::vec::Vec;

use super::{mean_of, need_domains, weighted_nll, DomainBatch};
use crate::diffkit::{Graph, Matrix, Model, ModelVars, Var};
use crate::error::{Error, Result};

/// A gradient on the graph, one node per parameter matrix.
pub type GradVec = Vec<Var>;

fn gv_sub(g: &mut Graph, a: &[Var], b: &[Var]) -> GradVec {
    a.iter().zip(b).map(|(&x, &y)| g.sub(x, y)).collect()
}

fn gv_dot(g: &mut Graph, a: &[Var], b: &[Var]) -> Var {
    let terms: Vec<Var> = a.iter().zip(b).map(|(&x, &y)| g.dot(x, y)).collect();
    g.add_all(&terms)
}

/// Weighted mean of gradient vectors.
fn gv_mean(g: &mut Graph, vs: &[GradVec], w: &[f64]) -> GradVec {
    (0..vs[0].len())
        .map(|p| {
            let terms: Vec<Var> = vs.iter().zip(w).map(|(v, &wi)| g.scale(v[p], wi)).collect();
            g.add_all(&terms)
        })
        .collect()
}

/// `∇_θ ℓ_d` for each domain loss, recorded so it can be differentiated.
pub fn domain_gradients(g: &mut Graph, losses: &[Var], params: &[Var]) -> Vec<GradVec> {
    losses.iter().map(|&l| g.grad(l, params)).collect()
}

/// Population variance of the domain losses, as `Σ_{i<j} (ℓ_i − ℓ_j)² / K²`
/// so that equal losses give exactly zero.
pub fn vrex_penalty(g: &mut Graph, losses: &[Var]) -> Result<Var> {
    need_domains(losses.len())?;
    let mut terms = Vec::new();
    for i in 0..losses.len() {
        for j in i + 1..losses.len() {
            let d = g.sub(losses[i], losses[j]);
            terms.push(g.square(d));
        }
    }
    let total = g.add_all(&terms);
    let k = losses.len() as f64;
    Ok(g.scale(total, 1.0 / (k * k)))
}

/// Mean domain loss plus `λ ·` variance of the domain losses.
pub fn vrex(g: &mut Graph, losses: &[Var], lambda: f64) -> Result<Var> {
    let var = vrex_penalty(g, losses)?;
    let m = mean_of(g, losses);
    let pen = g.scale(var, lambda);
    Ok(g.add(m, pen))
}

/// Worst domain loss and its index (lowest index on ties).
pub fn group_dro(g: &mut Graph, losses: &[Var]) -> Result<(Var, usize)> {
    need_domains(losses.len())?;
    let mut best = 0;
    for (i, &l) in losses.iter().enumerate().skip(1) {
        if g.scalar(l) > g.scalar(losses[best]) {
            best = i;
        }
    }
    Ok((losses[best], best))
}

/// Negated mean inner product over domain pairs.
pub fn fish_penalty(g: &mut Graph, grads: &[GradVec]) -> Result<Var> {
    need_domains(grads.len())?;
    let mut terms = Vec::new();
    for i in 0..grads.len() {
        for j in i + 1..grads.len() {
            terms.push(gv_dot(g, &grads[i], &grads[j]));
        }
    }
    let m = mean_of(g, &terms);
    Ok(g.scale(m, -1.0))
}

/// Trace of the across-domain population covariance of the gradients.
pub fn iga_penalty(g: &mut Graph, grads: &[GradVec]) -> Result<Var> {
    need_domains(grads.len())?;
    let w = alloc::vec![1.0 / grads.len() as f64; grads.len()];
    let mean = gv_mean(g, grads, &w);
    let terms: Vec<Var> = grads
        .iter()
        .map(|gd| {
            let d = gv_sub(g, gd, &mean);
            gv_dot(g, &d, &d)
        })
        .collect();
    Ok(mean_of(g, &terms))
}

/// Keeps a component (with its across-domain mean) when the fraction of
/// domains sharing the majority sign reaches `tau`; zeros count for no sign.
pub fn and_mask(grads: &[Vec<f64>], tau: f64) -> Result<Vec<f64>> {
    need_domains(grads.len())?;
    let n = grads[0].len();
    if let Some(bad) = grads.iter().find(|v| v.len() != n) {
        return Err(Error::ShapeMismatch { what: "domain gradient", expected: n, found: bad.len() });
    }
    let k = grads.len() as f64;
    Ok((0..n)
        .map(|i| {
            let pos = grads.iter().filter(|v| v[i] > 0.0).count();
            let neg = grads.iter().filter(|v| v[i] < 0.0).count();
            if pos.max(neg) as f64 / k >= tau {
                grads.iter().map(|v| v[i]).sum::<f64>() / k
            } else {
                0.0
            }
        })
        .collect())
}

/// Gradient of each row's own cross-entropy, one per batch row.
pub fn per_example_gradients(model: &Model, g: &mut Graph, vars: &ModelVars, batch: &DomainBatch) -> Vec<GradVec> {
    let (_, _, z) = model.record(g, vars, &batch.xs);
    let lp = g.log_softmax(z);
    let params = vars.all();
    let (r, c) = g.shape(lp);
    (0..r)
        .map(|i| {
            let mut t = Matrix::zeros(r, c);
            t.set(i, batch.labels[i], -1.0);
            let t = g.leaf(t);
            let li = g.dot(lp, t);
            g.grad(li, &params)
        })
        .collect()
}

/// Mean over domain pairs of `‖v_d − v_d'‖²`, where `v_d` is the weighted
/// componentwise variance of domain `d`'s per-example gradients. Each entry
/// of `domains` holds the per-example gradients and their weights.
pub fn fishr_from_gradients(g: &mut Graph, domains: &[(Vec<GradVec>, Vec<f64>)]) -> Result<Var> {
    need_domains(domains.len())?;
    let variances: Vec<GradVec> = domains
        .iter()
        .map(|(grads, w)| {
            let mean = gv_mean(g, grads, w);
            let sq: Vec<GradVec> = grads
                .iter()
                .map(|gi| {
                    let d = gv_sub(g, gi, &mean);
                    d.iter().map(|&v| g.square(v)).collect()
                })
                .collect();
            gv_mean(g, &sq, w)
        })
        .collect();
    let mut terms = Vec::new();
    for i in 0..variances.len() {
        for j in i + 1..variances.len() {
            let d = gv_sub(g, &variances[i], &variances[j]);
            terms.push(gv_dot(g, &d, &d));
        }
    }
    Ok(mean_of(g, &terms))
}

pub fn fishr_penalty(model: &Model, g: &mut Graph, vars: &ModelVars, batches: &[DomainBatch]) -> Result<Var> {
    need_domains(batches.len())?;
    for b in batches {
        if b.draws() < 2.0 {
            return Err(Error::TooFewExamples { needed: 2, got: b.draws() as usize });
        }
    }
    let per: Vec<(Vec<GradVec>, Vec<f64>)> =
        batches.iter().map(|b| (per_example_gradients(model, g, vars, b), b.weights.clone())).collect();
    fishr_from_gradients(g, &per)
}

/// `Σ_d (∂ℓ_d(s·z)/∂s |_{s=1})²`.
pub fn irm_penalty(model: &Model, g: &mut Graph, vars: &ModelVars, batches: &[DomainBatch]) -> Result<Var> {
    if batches.is_empty() {
        return Err(Error::TooFewDomains { needed: 1, got: 0 });
    }
    let terms: Vec<Var> = batches
        .iter()
        .map(|b| {
            let s = g.constant(1.0);
            let (_, _, z) = model.record(g, vars, &b.xs);
            let (r, c) = g.shape(z);
            let sb = g.broadcast(s, r, c);
            let zs = g.mul(z, sb);
            let lp = g.log_softmax(zs);
            let loss = weighted_nll(g, lp, &b.labels, &b.weights);
            let ds = g.grad(loss, &[s])[0];
            g.square(ds)
        })
        .collect();
    Ok(g.add_all(&terms))
}
