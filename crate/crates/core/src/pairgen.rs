//! Contrastive pairs by latent resampling: two observations generated from
//! the same core value with independently drawn non-core values.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cld::{CldFamily, DomainSpec};
use crate::error::{Error, Result};
use crate::rng::{categorical, Stream};

/// How the second non-core value is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStyle {
    /// Uniform over the non-core space.
    Uniform,
    /// From the domain's non-core marginal.
    #[default]
    Marginal,
}

/// Field names match the JSON-lines pair format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContrastivePair {
    pub x: usize,
    pub x_tilde: usize,
    pub label: Option<usize>,
    pub xc: usize,
    pub xn: usize,
    pub xn_tilde: usize,
}

fn resample_weights(domain: &DomainSpec, style: PairStyle) -> Vec<f64> {
    match style {
        PairStyle::Uniform => {
            let nn = domain.spaces().n_noncore;
            alloc::vec![1.0 / nn as f64; nn]
        }
        PairStyle::Marginal => domain.p_n(),
    }
}

/// Samples `n` pairs. With `labeled`, each pair carries a label drawn from
/// the domain's `P(Y | x^c, x^n)` (which is `P*(Y|x^c)` outside CLD3).
pub fn sample_pairs(
    family: &CldFamily,
    domain: &DomainSpec,
    n: usize,
    style: PairStyle,
    labeled: bool,
    seed: u64,
) -> Result<Vec<ContrastivePair>> {
    if n == 0 {
        return Err(Error::EmptyRequest("pair count"));
    }
    let s = family.spaces();
    let p_cn = domain.p_cn();
    let p_cny = domain.p_cny(family);
    let tilde = resample_weights(domain, style);
    let stream = Stream::new(seed).named("pairs");
    let pairs = (0..n as u64)
        .map(|i| {
            let mut rng = stream.at(i);
            let cn = categorical(&mut rng, &p_cn);
            let (c, xn) = (cn / s.n_noncore, cn % s.n_noncore);
            let xn_tilde = categorical(&mut rng, &tilde);
            let x = categorical(&mut rng, family.p_x(c, xn));
            let x_tilde = categorical(&mut rng, family.p_x(c, xn_tilde));
            let label = labeled.then(|| {
                let joint = &p_cny[cn * s.n_classes..(cn + 1) * s.n_classes];
                let mass: f64 = joint.iter().sum();
                let cond: Vec<f64> = joint.iter().map(|p| p / mass).collect();
                categorical(&mut rng, &cond)
            });
            ContrastivePair { x, x_tilde, label, xc: c, xn, xn_tilde }
        })
        .collect();
    Ok(pairs)
}

/// Pure-set composition: for each listed core value, `reps` observations
/// with independent non-core completions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PureComposition {
    /// Observation indices per pure element.
    pub groups: Vec<Vec<usize>>,
    /// All unordered pairs within each group, group by group.
    pub pairs: Vec<ContrastivePair>,
}

pub fn compose_pure(
    family: &CldFamily,
    pure: &[usize],
    domain: &DomainSpec,
    reps: usize,
    seed: u64,
) -> Result<PureComposition> {
    if pure.is_empty() {
        return Err(Error::EmptyPureSet);
    }
    if reps < 2 {
        return Err(Error::InvalidParameter { name: "reps", reason: "a group needs at least two members" });
    }
    let s = family.spaces();
    if let Some(&c) = pure.iter().find(|&&c| c >= s.n_core) {
        return Err(Error::IndexOutOfRange { what: "core value", index: c, bound: s.n_core });
    }
    let p_n = domain.p_n();
    let stream = Stream::new(seed).named("pure");
    let mut groups = Vec::with_capacity(pure.len());
    let mut pairs = Vec::with_capacity(pure.len() * reps * (reps - 1) / 2);
    for (g, &c) in pure.iter().enumerate() {
        // one generator per group keeps groups order-independent
        let mut rng = stream.at(g as u64);
        let members: Vec<(usize, usize)> = (0..reps)
            .map(|_| {
                let n = categorical(&mut rng, &p_n);
                (categorical(&mut rng, family.p_x(c, n)), n)
            })
            .collect();
        for i in 0..reps {
            for j in i + 1..reps {
                pairs.push(ContrastivePair {
                    x: members[i].0,
                    x_tilde: members[j].0,
                    label: None,
                    xc: c,
                    xn: members[i].1,
                    xn_tilde: members[j].1,
                });
            }
        }
        groups.push(members.into_iter().map(|(x, _)| x).collect());
    }
    Ok(PureComposition { groups, pairs })
}

/// Core values of the first `⌈fraction · n⌉` records of a synthetic dataset.
pub fn pure_from_dataset(dataset: &crate::cld::Dataset, fraction: f64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter { name: "fraction", reason: "must lie in (0, 1]" });
    }
    let k = libm::ceil(fraction * dataset.len() as f64) as usize;
    dataset.records[..k.min(dataset.len())]
        .iter()
        .map(|r| r.provenance.map(|p| p.core).ok_or(Error::EmptyPureSet))
        .collect()
}
