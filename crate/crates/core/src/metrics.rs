//! Evaluation: Jensen–Shannon causal-invariance index, losses and
//! accuracies, feature-distribution divergences.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cld::{sample_dataset, CldFamily, Dataset, DomainSpec};
use crate::diffkit::{Graph, Mlp, Model};
use crate::error::{Error, Result};
use crate::objectives::{coral_penalty, mmd_penalty, DomainBatch, FeatureSet};
use crate::oracle::{argmax, exact_accuracy, exact_loss, PredictorTable};
use crate::pairgen::PairStyle;
use crate::rng::{categorical, Stream};

fn check_distribution(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|v| !(0.0..=1.0 + 1e-9).contains(v)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution("entries must be probabilities summing to 1"));
    }
    Ok(())
}

/// Jensen–Shannon divergence with base-2 logarithms, in `[0, 1]`. Each term
/// is evaluated symmetrically, so swapping the arguments gives the same bits.
pub fn jsd_base2(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::InvalidDistribution("length mismatch"));
    }
    check_distribution(p)?;
    check_distribution(q)?;
    let half_kl = |a: f64, m: f64| if a > 0.0 { a * libm::log2(a / m) } else { 0.0 };
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if m > 0.0 {
            total += 0.5 * (half_kl(a, m) + half_kl(b, m));
        }
    }
    Ok(total.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_pairs: usize,
    pub style: PairStyle,
}

/// Monte Carlo CI index of a tabulated predictor: draw `(x^c, x^n)` from the
/// domain and `x̃^n` per `style`, estimate both fused conditionals by
/// averaging `reps` predictor rows in probability space, and average the
/// base-2 JSD.
pub fn ci_index_mc_table(
    table: &PredictorTable,
    family: &CldFamily,
    domain: &DomainSpec,
    n_pairs: usize,
    reps: usize,
    style: PairStyle,
    seed: u64,
) -> Result<CiEstimate> {
    if n_pairs == 0 || reps == 0 {
        return Err(Error::EmptyRequest("CI pairs and repetitions"));
    }
    let s = family.spaces();
    let k = s.n_classes;
    let p_cn = domain.p_cn();
    let tilde = match style {
        PairStyle::Marginal => domain.p_n(),
        PairStyle::Uniform => vec![1.0 / s.n_noncore as f64; s.n_noncore],
    };
    let stream = Stream::new(seed).named("ci-index");
    let fused = |rng: &mut rand_chacha::ChaCha8Rng, c: usize, n: usize| {
        let mut row = vec![0.0; k];
        for _ in 0..reps {
            let x = categorical(rng, family.p_x(c, n));
            for (r, &p) in row.iter_mut().zip(table.row(x)) {
                *r += p;
            }
        }
        row.iter_mut().for_each(|r| *r /= reps as f64);
        row
    };
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for i in 0..n_pairs as u64 {
        let mut rng = stream.at(i);
        let cn = categorical(&mut rng, &p_cn);
        let (c, n) = (cn / s.n_noncore, cn % s.n_noncore);
        let nt = categorical(&mut rng, &tilde);
        let a = fused(&mut rng, c, n);
        let b = fused(&mut rng, c, nt);
        let j = jsd_base2(&a, &b)?;
        sum += j;
        sum_sq += j * j;
    }
    let n = n_pairs as f64;
    let mean = sum / n;
    let stderr = if n_pairs > 1 {
        let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        libm::sqrt(var / n)
    } else {
        0.0
    };
    Ok(CiEstimate { value: (1.0 - mean).clamp(0.0, 1.0), stderr, n_pairs, style })
}

pub fn ci_index_mc(
    model: &Model,
    family: &CldFamily,
    domain: &DomainSpec,
    n_pairs: usize,
    reps: usize,
    style: PairStyle,
    seed: u64,
) -> Result<CiEstimate> {
    ci_index_mc_table(&model.predictor_table()?, family, domain, n_pairs, reps, style, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub domain_id: usize,
    pub loss: f64,
    pub accuracy: f64,
    /// Sample size; `None` for exact evaluation.
    pub n: Option<usize>,
}

/// Loss and accuracy of a table on a dataset.
pub fn evaluate_table_on(table: &PredictorTable, data: &Dataset) -> Result<EvalResult> {
    let batch = DomainBatch::from_dataset(data)?;
    let mut loss = 0.0;
    let mut acc = 0.0;
    for i in 0..batch.len() {
        let row = table.row(batch.xs[i]);
        loss -= batch.weights[i] * libm::log(row[batch.labels[i]]);
        if argmax(row) == batch.labels[i] {
            acc += batch.weights[i];
        }
    }
    Ok(EvalResult { domain_id: data.domain_id, loss, accuracy: acc, n: Some(data.len()) })
}

/// Sampled loss and accuracy on `n` fresh records.
pub fn evaluate(model: &Model, family: &CldFamily, domain: &DomainSpec, n: usize, seed: u64) -> Result<EvalResult> {
    let data = sample_dataset(family, domain, n, seed)?;
    evaluate_table_on(&model.predictor_table()?, &data)
}

/// Exact loss and accuracy through the tabulated model.
pub fn evaluate_exact(model: &Model, family: &CldFamily, domain: &DomainSpec) -> Result<EvalResult> {
    let table = model.predictor_table()?;
    Ok(EvalResult {
        domain_id: domain.domain_id,
        loss: exact_loss(family, domain, &table),
        accuracy: exact_accuracy(family, domain, &table),
        n: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub mmd: f64,
    pub coral: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDivergences {
    /// Across the domains' feature marginals.
    pub marginal: Divergence,
    /// Per class; `None` where fewer than two domains have two draws of it.
    pub per_class: Vec<Option<Divergence>>,
    /// Across the class-prior-normalised feature marginals.
    pub prior_normalized: Option<Divergence>,
}

fn divergence(model: &Model, batches: &[DomainBatch]) -> Result<Divergence> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g);
    let sets: Vec<FeatureSet> = batches.iter().map(|b| FeatureSet::from_batch(model, &mut g, &vars, b)).collect();
    let coral = coral_penalty(&mut g, &sets)?;
    let (mmd, _) = mmd_penalty(&mut g, &sets, None)?;
    Ok(Divergence { mmd: g.scalar(mmd), coral: g.scalar(coral) })
}

/// MMD and CORAL distances between the domains' feature distributions
/// (features `H` of `model`), optionally per class and for the
/// class-prior-normalised marginals.
pub fn feature_divergences(model: &Model, datasets: &[Dataset], per_class: bool) -> Result<FeatureDivergences> {
    if datasets.len() < 2 {
        return Err(Error::TooFewDomains { needed: 2, got: datasets.len() });
    }
    let batches: Vec<DomainBatch> = datasets.iter().map(DomainBatch::from_dataset).collect::<Result<_>>()?;
    let marginal = divergence(model, &batches)?;
    if !per_class {
        return Ok(FeatureDivergences { marginal, per_class: Vec::new(), prior_normalized: None });
    }
    let k = model.n_classes();
    let mut classes = Vec::with_capacity(k);
    for y in 0..k {
        let subsets: Vec<DomainBatch> =
            batches.iter().filter_map(|b| b.filter(|_, l| l == y)).filter(|b| b.draws() >= 2.0).collect();
        classes.push(if subsets.len() >= 2 { Some(divergence(model, &subsets)?) } else { None });
    }
    let balanced: Vec<DomainBatch> = batches.iter().map(|b| b.prior_normalized(k)).collect();
    Ok(FeatureDivergences { marginal, per_class: classes, prior_normalized: Some(divergence(model, &balanced)?) })
}

/// How often `adversary` names the right domain (its position in
/// `batches`) from the features of `model`; domains count equally.
pub fn domain_accuracy(model: &Model, adversary: &Mlp, batches: &[DomainBatch]) -> Result<f64> {
    if batches.len() < 2 {
        return Err(Error::TooFewDomains { needed: 2, got: batches.len() });
    }
    let mut total = 0.0;
    for (d, b) in batches.iter().enumerate() {
        let pass = model.forward(&b.xs)?;
        let mut g = Graph::new();
        let av = adversary.bind(&mut g);
        let h = g.leaf(pass.tape.value(pass.features).clone());
        let out = adversary.record(&mut g, &av, h);
        let scores = g.value(out);
        total += b.weights.iter().enumerate().filter(|&(i, _)| argmax(scores.row(i)) == d).map(|(_, w)| w).sum::<f64>();
    }
    Ok(total / batches.len() as f64)
}

#[cfg(test)]
mod tests;
