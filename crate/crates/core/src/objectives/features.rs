//! Penalties on logits and features: spectral decoupling, representation
//! self-challenging, moment and kernel alignment, adversarial alignment.

use alloc::vec;
use alloc::vec::Vec;

use super::{mean_of, need_domains, weighted_nll, DomainBatch};
use crate::diffkit::{Graph, Matrix, Mlp, Model, ModelVars, Var};
use crate::error::{Error, Result};

/// Weighted sample of feature vectors on the graph.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    /// `n × u` feature rows.
    pub features: Var,
    pub weights: Vec<f64>,
    /// Draws behind each row (`∞` for population rows).
    pub counts: Vec<f64>,
}

impl FeatureSet {
    pub fn from_batch(model: &Model, g: &mut Graph, vars: &ModelVars, batch: &DomainBatch) -> Self {
        let (_, h, _) = model.record(g, vars, &batch.xs);
        Self { features: h, weights: batch.weights.clone(), counts: batch.counts.clone() }
    }

    /// Equally weighted rows, one draw each.
    pub fn constant(g: &mut Graph, rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        Self { features: g.leaf(Matrix::from_rows(rows)), weights: vec![1.0 / n as f64; n], counts: vec![1.0; n] }
    }

    fn draws(&self) -> f64 {
        self.counts.iter().sum()
    }

    fn self_weight(&self) -> f64 {
        self.weights.iter().zip(&self.counts).map(|(w, c)| w * w / c).sum()
    }
}

fn check_sets(sets: &[FeatureSet]) -> Result<()> {
    need_domains(sets.len())?;
    for s in sets {
        if s.draws() < 2.0 {
            return Err(Error::TooFewExamples { needed: 2, got: s.draws() as usize });
        }
    }
    Ok(())
}

fn row(g: &mut Graph, w: &[f64]) -> Var {
    g.leaf(Matrix::from_vec(1, w.len(), w.to_vec()))
}

fn col(g: &mut Graph, w: &[f64]) -> Var {
    g.leaf(Matrix::from_vec(w.len(), 1, w.to_vec()))
}

/// `Σ_i w_i ‖z_i‖²`.
pub fn sd_penalty(g: &mut Graph, logits: Var, weights: &[f64]) -> Var {
    let sq = g.square(logits);
    let rows = g.row_sum(sq);
    let w = col(g, weights);
    g.dot(rows, w)
}

/// Units to mute: the `⌈q·u⌉` largest scores; among equal scores the higher
/// index is muted first, so lower indices are kept.
pub fn rsc_mute_set(scores: &[f64], q: f64) -> Vec<bool> {
    let u = scores.len();
    let k = (libm::ceil(q * u as f64) as usize).clamp(usize::from(u > 0), u);
    let mut order: Vec<usize> = (0..u).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(b.cmp(&a)));
    let mut muted = vec![false; u];
    for &i in &order[..k] {
        muted[i] = true;
    }
    muted
}

/// Cross-entropy after muting the feature units with the largest weighted
/// mean absolute gradient of the true-class logit. Returns the loss and the
/// muted units.
pub fn rsc_masked_loss(
    model: &Model,
    g: &mut Graph,
    vars: &ModelVars,
    batch: &DomainBatch,
    q: f64,
) -> (Var, Vec<bool>) {
    let (_, h, z) = model.record(g, vars, &batch.xs);
    let (r, c) = g.shape(z);
    let mut pick = Matrix::zeros(r, c);
    for (i, &y) in batch.labels.iter().enumerate() {
        pick.set(i, y, 1.0);
    }
    let pick = g.leaf(pick);
    let true_logits = g.dot(z, pick);
    let gh = g.grad(true_logits, &[h])[0];
    let grads = g.value(gh).clone();
    let u = grads.cols;
    let mut scores = vec![0.0; u];
    for i in 0..grads.rows {
        for (s, v) in scores.iter_mut().zip(grads.row(i)) {
            *s += batch.weights[i] * v.abs();
        }
    }
    let muted = rsc_mute_set(&scores, q);
    let keep: Vec<f64> = muted.iter().map(|&m| if m { 0.0 } else { 1.0 }).collect();
    let mut mask = Matrix::zeros(r, u);
    for i in 0..r {
        mask.data[i * u..(i + 1) * u].copy_from_slice(&keep);
    }
    let mask = g.leaf(mask);
    let hm = g.mul(h, mask);
    let zm = model.logits(g, vars, hm);
    let lp = g.log_softmax(zm);
    (weighted_nll(g, lp, &batch.labels, &batch.weights), muted)
}

/// Weighted mean (`1 × u`) and population covariance (`u × u`).
fn moments(g: &mut Graph, s: &FeatureSet) -> (Var, Var) {
    let n = s.weights.len();
    let w = row(g, &s.weights);
    let mu = g.matmul(w, s.features);
    let mb = g.broadcast_rows(mu, n);
    let d = g.sub(s.features, mb);
    let dw = g.scale_rows(d, &s.weights);
    let dwt = g.transpose(dw);
    (mu, g.matmul(dwt, d))
}

/// Mean over domain pairs of `‖μ_a − μ_b‖² + ‖C_a − C_b‖_F²`.
pub fn coral_penalty(g: &mut Graph, sets: &[FeatureSet]) -> Result<Var> {
    check_sets(sets)?;
    let m: Vec<(Var, Var)> = sets.iter().map(|s| moments(g, s)).collect();
    let mut terms = Vec::new();
    for i in 0..m.len() {
        for j in i + 1..m.len() {
            let dm = g.sub(m[i].0, m[j].0);
            let dc = g.sub(m[i].1, m[j].1);
            let a = g.dot(dm, dm);
            let b = g.dot(dc, dc);
            terms.push(g.add(a, b));
        }
    }
    Ok(mean_of(g, &terms))
}

/// Weighted median of pairwise distances over the pooled sets (each set
/// carrying equal total weight). Falls back to the median of non-zero
/// distances, then to 1.
pub fn median_bandwidth(rows: &[(Vec<f64>, f64)]) -> f64 {
    let mut d: Vec<(f64, f64)> = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let dist = libm::sqrt(rows[i].0.iter().zip(&rows[j].0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
            d.push((dist, rows[i].1 * rows[j].1));
        }
    }
    d.sort_by(|a, b| a.0.total_cmp(&b.0));
    let median = |d: &[(f64, f64)]| {
        let total: f64 = d.iter().map(|p| p.1).sum();
        let mut acc = 0.0;
        for &(v, w) in d {
            acc += w;
            if acc >= 0.5 * total {
                return v;
            }
        }
        d.last().map_or(0.0, |p| p.0)
    };
    let m = median(&d);
    if m > 0.0 {
        return m;
    }
    let nonzero: Vec<(f64, f64)> = d.into_iter().filter(|p| p.0 > 0.0).collect();
    let m = median(&nonzero);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

fn pooled_rows(g: &Graph, sets: &[FeatureSet]) -> Vec<(Vec<f64>, f64)> {
    let share = 1.0 / sets.len() as f64;
    sets.iter()
        .flat_map(|s| {
            let m = g.value(s.features);
            (0..m.rows).map(move |i| (m.row(i).to_vec(), s.weights[i] * share))
        })
        .collect()
}

/// `exp(−‖a − b‖² / (2σ²))` for all row pairs.
fn gaussian_kernel(g: &mut Graph, a: Var, b: Var, sigma: f64) -> Var {
    let (n, _) = g.shape(a);
    let (m, _) = g.shape(b);
    let a2 = g.square(a);
    let na = g.row_sum(a2);
    let na = g.broadcast_cols(na, m);
    let b2 = g.square(b);
    let nb = g.row_sum(b2);
    let nb = g.transpose(nb);
    let nb = g.broadcast_rows(nb, n);
    let bt = g.transpose(b);
    let ab = g.matmul(a, bt);
    let ab2 = g.scale(ab, -2.0);
    let s = g.add(na, nb);
    let d2 = g.add(s, ab2);
    let scaled = g.scale(d2, -1.0 / (2.0 * sigma * sigma));
    g.exp(scaled)
}

fn quad(g: &mut Graph, k: Var, wa: &[f64], wb: &[f64]) -> Var {
    let r = row(g, wa);
    let c = col(g, wb);
    let kc = g.matmul(k, c);
    g.matmul(r, kc)
}

/// Unbiased squared MMD with a Gaussian kernel, averaged over domain pairs;
/// may dip below zero. Returns the estimate and the bandwidth used.
pub fn mmd_unclamped(g: &mut Graph, sets: &[FeatureSet], bandwidth: Option<f64>) -> Result<(Var, f64)> {
    check_sets(sets)?;
    let sigma = bandwidth.unwrap_or_else(|| median_bandwidth(&pooled_rows(g, sets)));
    let within: Vec<Var> = sets
        .iter()
        .map(|s| {
            let k = gaussian_kernel(g, s.features, s.features, sigma);
            let q = quad(g, k, &s.weights, &s.weights);
            let sw = s.self_weight();
            let q = g.add_scalar(q, -sw);
            g.scale(q, 1.0 / (1.0 - sw))
        })
        .collect();
    let mut terms = Vec::new();
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            let k = gaussian_kernel(g, sets[i].features, sets[j].features, sigma);
            let cross = quad(g, k, &sets[i].weights, &sets[j].weights);
            let c2 = g.scale(cross, -2.0);
            let s = g.add(within[i], within[j]);
            terms.push(g.add(s, c2));
        }
    }
    Ok((mean_of(g, &terms), sigma))
}

/// [`mmd_unclamped`] clamped at zero (the raw value is logged). Returns the
/// penalty and the bandwidth used.
pub fn mmd_penalty(g: &mut Graph, sets: &[FeatureSet], bandwidth: Option<f64>) -> Result<(Var, f64)> {
    let (raw, sigma) = mmd_unclamped(g, sets, bandwidth)?;
    if g.scalar(raw) < 0.0 {
        log::debug!("unbiased MMD estimate {} clamped to 0", g.scalar(raw));
        let zero = g.constant(0.0);
        return Ok((zero, sigma));
    }
    Ok((raw, sigma))
}

/// Domain-classification loss of `adversary` on reversed features of each
/// `(domain index, batch)`, averaged over the entries.
fn adversary_loss(
    model: &Model,
    g: &mut Graph,
    vars: &ModelVars,
    adversary: &Mlp,
    adv_vars: &[Var],
    entries: &[(usize, DomainBatch)],
    reversal: f64,
) -> Var {
    let terms: Vec<Var> = entries
        .iter()
        .map(|(d, b)| {
            let (_, h, _) = model.record(g, vars, &b.xs);
            let hr = g.gradient_reversal(h, reversal);
            let logits = adversary.record(g, adv_vars, hr);
            let lp = g.log_softmax(logits);
            let labels = vec![*d; b.len()];
            weighted_nll(g, lp, &labels, &b.weights)
        })
        .collect();
    mean_of(g, &terms)
}

/// `(label loss, domain loss)`; the domain loss reaches the extractor
/// through a gradient-reversal node.
pub fn dann_losses(
    model: &Model,
    g: &mut Graph,
    vars: &ModelVars,
    adversary: &Mlp,
    adv_vars: &[Var],
    batches: &[DomainBatch],
    reversal: f64,
) -> Result<(Var, Var)> {
    need_domains(batches.len())?;
    let label_terms: Vec<Var> = batches.iter().map(|b| super::erm_loss(model, g, vars, b)).collect();
    let label = mean_of(g, &label_terms);
    let entries: Vec<(usize, DomainBatch)> = batches.iter().cloned().enumerate().collect();
    let domain = adversary_loss(model, g, vars, adversary, adv_vars, &entries, reversal);
    Ok((label, domain))
}

/// C-DANN: one adversary per class on class-conditional features plus one
/// on the class-prior-normalised marginal (`adversaries[n_classes]`).
/// Classes present in fewer than two domains are skipped.
pub fn cdann_losses(
    model: &Model,
    g: &mut Graph,
    vars: &ModelVars,
    adversaries: &[Mlp],
    adv_vars: &[Vec<Var>],
    batches: &[DomainBatch],
    reversal: f64,
) -> Result<(Var, Var)> {
    need_domains(batches.len())?;
    let k = model.n_classes();
    if adversaries.len() != k + 1 {
        return Err(Error::ShapeMismatch { what: "adversaries", expected: k + 1, found: adversaries.len() });
    }
    let label_terms: Vec<Var> = batches.iter().map(|b| super::erm_loss(model, g, vars, b)).collect();
    let label = mean_of(g, &label_terms);
    let mut terms = Vec::new();
    for y in 0..k {
        let entries: Vec<(usize, DomainBatch)> =
            batches.iter().enumerate().filter_map(|(d, b)| b.filter(|_, l| l == y).map(|s| (d, s))).collect();
        if entries.len() >= 2 {
            terms.push(adversary_loss(model, g, vars, &adversaries[y], &adv_vars[y], &entries, reversal));
        }
    }
    let balanced: Vec<(usize, DomainBatch)> = batches.iter().map(|b| b.prior_normalized(k)).enumerate().collect();
    terms.push(adversary_loss(model, g, vars, &adversaries[k], &adv_vars[k], &balanced, reversal));
    Ok((label, mean_of(g, &terms)))
}
