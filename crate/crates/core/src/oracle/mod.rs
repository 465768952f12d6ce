//! Exact enumeration over discrete families.
//!
//! Every quantity here is an exact finite sum over `(x^c, x^n, x, y)`; no
//! sampling is involved. Losses are in nats. The CI index uses base-2
//! Jensen–Shannon divergence.

mod theorems;

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::cld::{check_rows, CldFamily, DomainSpec, INTERNAL_TOLERANCE};
use crate::error::{Error, Result};
use crate::metrics::jsd_base2;
use crate::rng::Stream;

pub use theorems::{verify_theorems, ClaimId, ClaimResult, ClaimStatus, TheoremReport, CLAIMS};

/// A conditional table `x ↦ P̂(Ŷ | x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorTable {
    n_obs: usize,
    n_classes: usize,
    probs: Vec<f64>,
}

impl PredictorTable {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let n_classes = rows.first().map_or(0, Vec::len);
        let mut probs = Vec::with_capacity(rows.len() * n_classes);
        for r in rows {
            if r.len() != n_classes {
                return Err(Error::ShapeMismatch { what: "predictor row", expected: n_classes, found: r.len() });
            }
            probs.extend_from_slice(r);
        }
        Self::from_flat(rows.len(), n_classes, probs, 1e-9)
    }

    pub fn from_flat(n_obs: usize, n_classes: usize, probs: Vec<f64>, tol: f64) -> Result<Self> {
        if probs.len() != n_obs * n_classes || n_classes == 0 {
            return Err(Error::ShapeMismatch {
                what: "predictor table",
                expected: n_obs * n_classes,
                found: probs.len(),
            });
        }
        check_rows("predictor table", &probs, n_classes, tol)?;
        Ok(Self { n_obs, n_classes, probs })
    }

    /// Table whose row at `x` is `row(x)`.
    pub fn from_fn(n_obs: usize, n_classes: usize, mut row: impl FnMut(usize) -> Vec<f64>) -> Result<Self> {
        let mut probs = Vec::with_capacity(n_obs * n_classes);
        for x in 0..n_obs {
            probs.extend(row(x));
        }
        Self::from_flat(n_obs, n_classes, probs, 1e-9)
    }

    pub fn uniform(n_obs: usize, n_classes: usize) -> Self {
        Self { n_obs, n_classes, probs: vec![1.0 / n_classes as f64; n_obs * n_classes] }
    }

    /// Rows drawn independently and uniformly from the simplex.
    pub fn random(stream: &Stream, index: u64, n_obs: usize, n_classes: usize) -> Self {
        let mut rng = stream.at(index);
        let mut probs = Vec::with_capacity(n_obs * n_classes);
        for _ in 0..n_obs {
            probs.extend(random_simplex(&mut rng, n_classes));
        }
        Self { n_obs, n_classes, probs }
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.probs[x * self.n_classes..(x + 1) * self.n_classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.n_classes)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.probs
    }
}

pub(crate) fn random_simplex<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1) + 1e-12).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// The fused conditional `P̈(Ŷ | x^c, x^n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedTable {
    n_core: usize,
    n_noncore: usize,
    n_classes: usize,
    probs: Vec<f64>,
}

impl FusedTable {
    pub fn row(&self, c: usize, n: usize) -> &[f64] {
        let k = self.n_classes;
        let start = (c * self.n_noncore + n) * k;
        &self.probs[start..start + k]
    }

    pub fn n_core(&self) -> usize {
        self.n_core
    }

    pub fn n_noncore(&self) -> usize {
        self.n_noncore
    }
}

fn check_shapes(family: &CldFamily, predictor: &PredictorTable) {
    let s = family.spaces();
    assert_eq!(predictor.n_obs, s.n_obs, "predictor rows must match the observation space");
    assert_eq!(predictor.n_classes, s.n_classes, "predictor width must match the label space");
}

/// Exact expected cross-entropy of `predictor` in `domain`, in nats.
/// Returns `+∞` when a reachable `(x, y)` gets predictor probability 0.
pub fn exact_loss(family: &CldFamily, domain: &DomainSpec, predictor: &PredictorTable) -> f64 {
    check_shapes(family, predictor);
    let s = family.spaces();
    let k = s.n_classes;
    let cny = domain.p_cny(family);
    let mut loss = 0.0;
    for c in 0..s.n_core {
        for n in 0..s.n_noncore {
            let base = (c * s.n_noncore + n) * k;
            for (x, &px) in family.p_x(c, n).iter().enumerate() {
                if px == 0.0 {
                    continue;
                }
                let row = predictor.row(x);
                for y in 0..k {
                    let mass = px * cny[base + y];
                    if mass == 0.0 {
                        continue;
                    }
                    if row[y] == 0.0 {
                        return f64::INFINITY;
                    }
                    loss -= mass * libm::log(row[y]);
                }
            }
        }
    }
    loss
}

/// Exact probability that the lowest-index argmax of the row equals `y`.
pub fn exact_accuracy(family: &CldFamily, domain: &DomainSpec, predictor: &PredictorTable) -> f64 {
    check_shapes(family, predictor);
    let k = family.spaces().n_classes;
    let pxy = domain.p_xy(family);
    let mut acc = 0.0;
    for x in 0..predictor.n_obs {
        let pred = argmax(predictor.row(x));
        acc += pxy[x * k + pred];
    }
    acc
}

/// Lowest index among the maxima.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// The in-domain Bayes predictor `P^d(Y | x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesPredictor {
    pub table: PredictorTable,
    /// Observations with zero mass in the domain; their rows are uniform.
    pub unreachable: Vec<bool>,
}

pub fn bayes_predictor(family: &CldFamily, domain: &DomainSpec) -> BayesPredictor {
    let s = family.spaces();
    let k = s.n_classes;
    let mut pxy = domain.p_xy(family);
    let mut unreachable = vec![false; s.n_obs];
    for (x, row) in pxy.chunks_mut(k).enumerate() {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|p| *p /= total);
        } else {
            unreachable[x] = true;
            row.iter_mut().for_each(|p| *p = 1.0 / k as f64);
        }
    }
    BayesPredictor { table: PredictorTable { n_obs: s.n_obs, n_classes: k, probs: pxy }, unreachable }
}

/// The source-optimal causal-faithful predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalFaithfulOptimum {
    pub table: PredictorTable,
    /// Set when the core factor cannot be read off the observation and the
    /// best constant predictor was returned instead.
    pub degenerate: bool,
}

/// Lifts `P*(Y | x^c)` through the observation when every reachable `x`
/// identifies its core value. Otherwise returns the best constant predictor,
/// the source label marginal, and flags the degeneracy.
pub fn optimal_causal_faithful(family: &CldFamily, source: &DomainSpec) -> CausalFaithfulOptimum {
    let s = family.spaces();
    let k = s.n_classes;
    if family.is_core_recoverable() {
        let owners = family.core_of_observation();
        let mut probs = Vec::with_capacity(s.n_obs * k);
        for owner in owners {
            match owner {
                Some(c) => probs.extend_from_slice(family.p_y(c)),
                None => probs.extend(core::iter::repeat_n(1.0 / k as f64, k)),
            }
        }
        return CausalFaithfulOptimum {
            table: PredictorTable { n_obs: s.n_obs, n_classes: k, probs },
            degenerate: false,
        };
    }
    let marginal = label_marginal(family, source);
    CausalFaithfulOptimum {
        table: PredictorTable {
            n_obs: s.n_obs,
            n_classes: k,
            probs: marginal.iter().copied().cycle().take(s.n_obs * k).collect(),
        },
        degenerate: true,
    }
}

/// `P^d(Y)`.
pub fn label_marginal(family: &CldFamily, domain: &DomainSpec) -> Vec<f64> {
    let k = family.spaces().n_classes;
    let mut out = vec![0.0; k];
    for (i, p) in domain.p_cny(family).into_iter().enumerate() {
        out[i % k] += p;
    }
    out
}

/// Composes the generation channel with a predictor.
pub fn fuse(family: &CldFamily, predictor: &PredictorTable) -> FusedTable {
    check_shapes(family, predictor);
    let s = family.spaces();
    let k = s.n_classes;
    let mut probs = vec![0.0; s.n_core * s.n_noncore * k];
    for c in 0..s.n_core {
        for n in 0..s.n_noncore {
            let out = &mut probs[(c * s.n_noncore + n) * k..(c * s.n_noncore + n + 1) * k];
            for (x, &px) in family.p_x(c, n).iter().enumerate() {
                if px == 0.0 {
                    continue;
                }
                for (o, &q) in out.iter_mut().zip(predictor.row(x)) {
                    *o += px * q;
                }
            }
        }
    }
    FusedTable { n_core: s.n_core, n_noncore: s.n_noncore, n_classes: k, probs }
}

/// Latent coordinates at which a causal-invariance check found its largest
/// deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvarianceWitness {
    pub core: usize,
    pub noncore: usize,
    pub noncore_tilde: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvarianceCheck {
    pub invariant: bool,
    /// Largest total-variation distance between rows that must agree.
    pub max_deviation: f64,
    /// Reported when the check fails.
    pub witness: Option<InvarianceWitness>,
}

pub(crate) fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Checks that the predictor gives the same row to every pair of
/// observations generated from a common core value, including two noisy
/// draws from the same latent pair. Unreachable observations are ignored.
pub fn is_causal_invariant(family: &CldFamily, predictor: &PredictorTable, tol: f64) -> InvarianceCheck {
    check_shapes(family, predictor);
    let s = family.spaces();
    let mut max_deviation = 0.0;
    let mut arg: Option<InvarianceWitness> = None;
    for c in 0..s.n_core {
        for n in 0..s.n_noncore {
            for nt in 0..s.n_noncore {
                let mut dev = 0.0f64;
                for (x, &px) in family.p_x(c, n).iter().enumerate() {
                    if px == 0.0 {
                        continue;
                    }
                    for (xt, &pxt) in family.p_x(c, nt).iter().enumerate() {
                        if pxt == 0.0 {
                            continue;
                        }
                        dev = dev.max(total_variation(predictor.row(x), predictor.row(xt)));
                    }
                }
                if dev > max_deviation {
                    max_deviation = dev;
                    arg = Some(InvarianceWitness { core: c, noncore: n, noncore_tilde: nt });
                }
            }
        }
    }
    let invariant = max_deviation <= tol;
    InvarianceCheck { invariant, max_deviation, witness: if invariant { None } else { arg } }
}

/// Exact CI index: one minus the expected base-2 JSD between fused rows at
/// `(x^c, x^n)` and `(x^c, x̃^n)`, with `x̃^n` drawn from the domain's
/// non-core marginal.
pub fn exact_ci_index(family: &CldFamily, domain: &DomainSpec, predictor: &PredictorTable) -> f64 {
    let fused = fuse(family, predictor);
    ci_index_of_fused(&fused, domain)
}

pub(crate) fn ci_index_of_fused(fused: &FusedTable, domain: &DomainSpec) -> f64 {
    let p_cn = domain.p_cn();
    let p_n = domain.p_n();
    let nn = fused.n_noncore;
    let mut expected = 0.0;
    for c in 0..fused.n_core {
        for n in 0..nn {
            let w = p_cn[c * nn + n];
            if w == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for (nt, &pnt) in p_n.iter().enumerate() {
                if pnt == 0.0 || nt == n {
                    continue;
                }
                inner += pnt * jsd_base2(fused.row(c, n), fused.row(c, nt)).expect("fused rows are distributions");
            }
            expected += w * inner;
        }
    }
    (1.0 - expected).clamp(0.0, 1.0)
}

/// Support containment between a source and a target domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SupportCondition {
    /// Target core values all occur in the source.
    pub cond3: bool,
    /// Target `(core, non-core)` combinations all occur in the source.
    pub cond3prime: bool,
}

pub fn support_condition(source: &DomainSpec, target: &DomainSpec) -> SupportCondition {
    let contained = |t: &[f64], s: &[f64]| t.iter().zip(s).all(|(&pt, &ps)| pt == 0.0 || ps > 0.0);
    let cond3 = contained(&target.p_c(), &source.p_c());
    let cond3prime = contained(&target.p_cn(), &source.p_cn());
    debug_assert!(!cond3prime || cond3);
    SupportCondition { cond3, cond3prime }
}

/// Validates an internally built table.
pub(crate) fn internal_table(n_obs: usize, n_classes: usize, probs: Vec<f64>) -> PredictorTable {
    debug_assert!(check_rows("predictor table", &probs, n_classes, INTERNAL_TOLERANCE * 1e3).is_ok());
    PredictorTable { n_obs, n_classes, probs }
}

#[cfg(test)]
mod tests;
