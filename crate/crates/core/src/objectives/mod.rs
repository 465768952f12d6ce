//! Training criteria and regularizers. Each builds a scalar node on a
//! [`Graph`] (or, for AND-mask, transforms gradients).
//!
//! Batches are weighted: a row is a distinct `(x, y)` with its probability
//! mass and the number of draws behind it (`∞` for an exact population
//! batch). Every quantity below is the corresponding per-example quantity
//! averaged under these weights, so a compressed sampled batch gives
//! exactly the same value as the expanded one.

mod augment;
mod composite;
mod features;
mod multi;
mod pairs;

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cld::{CldFamily, Dataset, DomainSpec};
use crate::diffkit::{Graph, Matrix, Var};
use crate::error::{Error, Result};

pub use augment::{mix, mixup_batch, swa_average, MixedBatch};
pub use composite::{build_objective, AdversarySet, Built, PairData};
pub use features::{
    cdann_losses, coral_penalty, dann_losses, median_bandwidth, mmd_penalty, mmd_unclamped, rsc_masked_loss,
    rsc_mute_set, sd_penalty, FeatureSet,
};
pub use multi::{
    and_mask, domain_gradients, fish_penalty, fishr_from_gradients, fishr_penalty, group_dro, iga_penalty, irm_penalty,
    per_example_gradients, vrex, vrex_penalty, GradVec,
};
pub use pairs::{group_regularizer, lam_regularizer, pair_regularizer, PairKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ObjectiveKind {
    Erm,
    PairProb,
    PairLogit,
    PairFeat,
    Lam,
    Vrex,
    GroupDro,
    Fish,
    Iga,
    AndMask,
    Fishr,
    Irm,
    Sd,
    Rsc,
    Coral,
    Mmd,
    Dann,
    Cdann,
    Mixup,
    Swa,
}

impl ObjectiveKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Erm => "ERM",
            ObjectiveKind::PairProb => "PAIR_PROB",
            ObjectiveKind::PairLogit => "PAIR_LOGIT",
            ObjectiveKind::PairFeat => "PAIR_FEAT",
            ObjectiveKind::Lam => "LAM",
            ObjectiveKind::Vrex => "VREX",
            ObjectiveKind::GroupDro => "GROUP_DRO",
            ObjectiveKind::Fish => "FISH",
            ObjectiveKind::Iga => "IGA",
            ObjectiveKind::AndMask => "AND_MASK",
            ObjectiveKind::Fishr => "FISHR",
            ObjectiveKind::Irm => "IRM",
            ObjectiveKind::Sd => "SD",
            ObjectiveKind::Rsc => "RSC",
            ObjectiveKind::Coral => "CORAL",
            ObjectiveKind::Mmd => "MMD",
            ObjectiveKind::Dann => "DANN",
            ObjectiveKind::Cdann => "CDANN",
            ObjectiveKind::Mixup => "MIXUP",
            ObjectiveKind::Swa => "SWA",
        }
    }

    /// Needs contrastive pairs.
    pub fn uses_pairs(self) -> bool {
        matches!(
            self,
            ObjectiveKind::PairProb | ObjectiveKind::PairLogit | ObjectiveKind::PairFeat | ObjectiveKind::Lam
        )
    }

    /// Compares two or more domains.
    pub fn is_multi_domain(self) -> bool {
        matches!(
            self,
            ObjectiveKind::Vrex
                | ObjectiveKind::GroupDro
                | ObjectiveKind::Fish
                | ObjectiveKind::Iga
                | ObjectiveKind::AndMask
                | ObjectiveKind::Fishr
                | ObjectiveKind::Coral
                | ObjectiveKind::Mmd
                | ObjectiveKind::Dann
                | ObjectiveKind::Cdann
        )
    }
}

/// Kind-specific parameters; unset fields take the documented defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Extras {
    /// RSC muting fraction, default 1/3.
    pub q: Option<f64>,
    /// AND-mask quorum, default 1.
    pub tau: Option<f64>,
    /// Mixup Beta parameter, default 0.2.
    pub alpha: Option<f64>,
    /// Gaussian kernel bandwidth; median heuristic when unset.
    pub bandwidth: Option<f64>,
    /// Hidden width of DANN/C-DANN adversaries, default 16.
    pub adversary_hidden: Option<usize>,
    /// Symmetrised KL for probability matching.
    pub symmetric: bool,
    /// Use pure-set groups (sum of variances) instead of pairs.
    pub groups: bool,
    /// Mixed examples per domain and step, default 64.
    pub mixup_samples: Option<usize>,
    /// SWA: first step included in the average, default half the run.
    pub swa_start: Option<usize>,
    /// SWA: snapshot interval, default 10.
    pub swa_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub extras: Extras,
}

impl ObjectiveConfig {
    pub fn new(kind: ObjectiveKind, lambda: f64) -> Self {
        Self { kind, lambda, extras: Extras::default() }
    }

    pub fn erm() -> Self {
        Self::new(ObjectiveKind::Erm, 0.0)
    }

    pub fn q(&self) -> f64 {
        self.extras.q.unwrap_or(1.0 / 3.0)
    }

    pub fn tau(&self) -> f64 {
        self.extras.tau.unwrap_or(1.0)
    }

    pub fn alpha(&self) -> f64 {
        self.extras.alpha.unwrap_or(0.2)
    }

    pub fn adversary_hidden(&self) -> usize {
        self.extras.adversary_hidden.unwrap_or(16)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason| Err(Error::InvalidParameter { name, reason });
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda", "must be finite and non-negative");
        }
        let q = self.q();
        if !(q > 0.0 && q < 1.0) {
            return bad("q", "must lie in (0, 1)");
        }
        let tau = self.tau();
        if !(tau > 0.5 && tau <= 1.0) {
            return bad("tau", "must lie in (0.5, 1]");
        }
        if !(self.alpha() > 0.0 && self.alpha().is_finite()) {
            return bad("alpha", "must be positive");
        }
        if let Some(b) = self.extras.bandwidth {
            if !(b > 0.0 && b.is_finite()) {
                return bad("bandwidth", "must be positive");
            }
        }
        if self.adversary_hidden() == 0 {
            return bad("adversary_hidden", "must be positive");
        }
        if self.extras.mixup_samples == Some(0) {
            return bad("mixup_samples", "must be positive");
        }
        if self.extras.swa_every == Some(0) {
            return bad("swa_every", "must be positive");
        }
        Ok(())
    }
}

/// Weighted examples from one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBatch {
    pub domain_id: usize,
    pub xs: Vec<usize>,
    pub labels: Vec<usize>,
    /// Probability mass of each row; sums to 1.
    pub weights: Vec<f64>,
    /// Draws behind each row; `∞` for population batches.
    pub counts: Vec<f64>,
}

impl DomainBatch {
    /// Equally weighted rows, one draw each.
    pub fn new(domain_id: usize, xs: Vec<usize>, labels: Vec<usize>) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::EmptyRequest("batch"));
        }
        if xs.len() != labels.len() {
            return Err(Error::ShapeMismatch { what: "batch labels", expected: xs.len(), found: labels.len() });
        }
        let w = 1.0 / xs.len() as f64;
        let n = xs.len();
        Ok(Self { domain_id, xs, labels, weights: vec![w; n], counts: vec![1.0; n] })
    }

    /// Aggregates repeated `(x, y)` records.
    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyRequest("dataset"));
        }
        let mut tally: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for r in &data.records {
            *tally.entry((r.x, r.y)).or_default() += 1;
        }
        let n = data.len() as f64;
        let mut b = Self {
            domain_id: data.domain_id,
            xs: Vec::with_capacity(tally.len()),
            labels: Vec::with_capacity(tally.len()),
            weights: Vec::with_capacity(tally.len()),
            counts: Vec::with_capacity(tally.len()),
        };
        for ((x, y), c) in tally {
            b.xs.push(x);
            b.labels.push(y);
            b.weights.push(c as f64 / n);
            b.counts.push(c as f64);
        }
        Ok(b)
    }

    /// Every reachable `(x, y)` with its exact probability.
    pub fn exact(family: &CldFamily, domain: &DomainSpec) -> Self {
        let k = family.spaces().n_classes;
        let pxy = domain.p_xy(family);
        let mut b = Self {
            domain_id: domain.domain_id,
            xs: Vec::new(),
            labels: Vec::new(),
            weights: Vec::new(),
            counts: Vec::new(),
        };
        for (i, &p) in pxy.iter().enumerate() {
            if p > 0.0 {
                b.xs.push(i / k);
                b.labels.push(i % k);
                b.weights.push(p);
                b.counts.push(f64::INFINITY);
            }
        }
        b
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Number of draws behind the batch (`∞` for population batches).
    pub fn draws(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// `Σ_a w_a² / c_a`: the diagonal share removed by unbiased estimators.
    pub fn self_weight(&self) -> f64 {
        self.weights.iter().zip(&self.counts).map(|(w, c)| w * w / c).sum()
    }

    /// Rows restricted to `keep`, renormalised.
    pub fn filter(&self, keep: impl Fn(usize, usize) -> bool) -> Option<Self> {
        let mut b = Self {
            domain_id: self.domain_id,
            xs: Vec::new(),
            labels: Vec::new(),
            weights: Vec::new(),
            counts: Vec::new(),
        };
        for i in 0..self.len() {
            if keep(self.xs[i], self.labels[i]) {
                b.xs.push(self.xs[i]);
                b.labels.push(self.labels[i]);
                b.weights.push(self.weights[i]);
                b.counts.push(self.counts[i]);
            }
        }
        let total: f64 = b.weights.iter().sum();
        if b.is_empty() || total <= 0.0 {
            return None;
        }
        b.weights.iter_mut().for_each(|w| *w /= total);
        Some(b)
    }

    /// Reweights rows by `1 / (K' · P(y))` so every present class carries equal
    /// mass (`K'` = number of present classes).
    pub fn prior_normalized(&self, n_classes: usize) -> Self {
        let mut prior = vec![0.0; n_classes];
        for (&l, &w) in self.labels.iter().zip(&self.weights) {
            prior[l] += w;
        }
        let present = prior.iter().filter(|&&p| p > 0.0).count() as f64;
        let mut out = self.clone();
        for (w, &l) in out.weights.iter_mut().zip(&self.labels) {
            *w /= present * prior[l];
        }
        out
    }

    pub fn check_labels(&self, n_classes: usize) -> Result<()> {
        match self.labels.iter().find(|&&y| y >= n_classes) {
            Some(&y) => Err(Error::IndexOutOfRange { what: "class", index: y, bound: n_classes }),
            None => Ok(()),
        }
    }
}

/// `−Σ_i w_i log p_i[y_i]` from row log-probabilities.
pub fn weighted_nll(g: &mut Graph, log_probs: Var, labels: &[usize], weights: &[f64]) -> Var {
    let (r, c) = g.shape(log_probs);
    let mut t = Matrix::zeros(r, c);
    for (i, (&y, &w)) in labels.iter().zip(weights).enumerate() {
        t.set(i, y, -w);
    }
    let t = g.leaf(t);
    g.dot(log_probs, t)
}

/// `−Σ_i Σ_y targets[i, y] log p_i[y]`; targets rows carry the example weights.
pub fn soft_nll(g: &mut Graph, log_probs: Var, targets: &Matrix) -> Var {
    let t = g.leaf(targets.map(|v| -v));
    g.dot(log_probs, t)
}

/// Mean cross-entropy of the model on a weighted batch.
pub fn erm_loss(
    model: &crate::diffkit::Model,
    g: &mut Graph,
    vars: &crate::diffkit::ModelVars,
    batch: &DomainBatch,
) -> Var {
    let (_, _, z) = model.record(g, vars, &batch.xs);
    let lp = g.log_softmax(z);
    weighted_nll(g, lp, &batch.labels, &batch.weights)
}

/// Mean of several scalar nodes.
pub(crate) fn mean_of(g: &mut Graph, terms: &[Var]) -> Var {
    let s = g.add_all(terms);
    g.scale(s, 1.0 / terms.len().max(1) as f64)
}

pub(crate) fn need_domains(got: usize) -> Result<()> {
    if got < 2 {
        Err(Error::TooFewDomains { needed: 2, got })
    } else {
        Ok(())
    }
}
