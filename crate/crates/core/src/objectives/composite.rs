//! Assembles the training loss for an [`ObjectiveConfig`].

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::features::{cdann_losses, coral_penalty, dann_losses, mmd_penalty, rsc_masked_loss, sd_penalty, FeatureSet};
use super::multi::{domain_gradients, fish_penalty, fishr_penalty, group_dro, iga_penalty, irm_penalty, vrex_penalty};
use super::pairs::{group_regularizer, lam_regularizer, pair_regularizer, PairKind};
use super::{erm_loss, mean_of, mixup_batch, need_domains, soft_nll, DomainBatch, ObjectiveConfig, ObjectiveKind};
use crate::diffkit::{Graph, Mlp, Model, ModelVars, Var};
use crate::error::{Error, Result};
use crate::pairgen::ContrastivePair;
use crate::rng::Stream;

/// Contrastive data for the pair objectives.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairData {
    pub pairs: Vec<ContrastivePair>,
    /// Pure-set groups of observation indices, used when `extras.groups` is set.
    pub groups: Vec<Vec<usize>>,
}

/// Domain adversaries (one for DANN, `n_classes + 1` for C-DANN) bound to
/// the graph.
#[derive(Debug, Clone)]
pub struct AdversarySet<'a> {
    pub nets: &'a [Mlp],
    pub vars: Vec<Vec<Var>>,
}

/// The recorded objective.
#[derive(Debug, Clone)]
pub struct Built {
    pub loss: Var,
    /// Unscaled penalty term, when the objective has one.
    pub penalty: Option<Var>,
    /// Per-domain cross-entropy.
    pub domain_losses: Vec<Var>,
}

fn pair_data(pairs: Option<&PairData>) -> Result<&PairData> {
    pairs.ok_or(Error::EmptyRequest("pairs"))
}

#[allow(clippy::too_many_arguments)]
pub fn build_objective(
    cfg: &ObjectiveConfig,
    model: &Model,
    g: &mut Graph,
    vars: &ModelVars,
    batches: &[DomainBatch],
    pairs: Option<&PairData>,
    adversaries: Option<&AdversarySet>,
    mixup_stream: Option<&Stream>,
) -> Result<Built> {
    if batches.is_empty() {
        return Err(Error::TooFewDomains { needed: 1, got: 0 });
    }
    if cfg.kind.is_multi_domain() {
        need_domains(batches.len())?;
    }
    let domain_losses: Vec<Var> = batches.iter().map(|b| erm_loss(model, g, vars, b)).collect();
    let base = mean_of(g, &domain_losses);
    let lambda = cfg.lambda;
    let with_penalty = |g: &mut Graph, p: Var| {
        let s = g.scale(p, lambda);
        g.add(base, s)
    };
    let (loss, penalty) = match cfg.kind {
        ObjectiveKind::Erm | ObjectiveKind::Swa | ObjectiveKind::AndMask => (base, None),
        ObjectiveKind::PairProb | ObjectiveKind::PairLogit | ObjectiveKind::PairFeat => {
            let kind = match cfg.kind {
                ObjectiveKind::PairProb => PairKind::Prob,
                ObjectiveKind::PairLogit => PairKind::Logit,
                _ => PairKind::Feat,
            };
            let data = pair_data(pairs)?;
            let p = if cfg.extras.groups {
                group_regularizer(model, g, vars, &data.groups, kind, cfg.extras.symmetric)?
            } else {
                pair_regularizer(model, g, vars, &data.pairs, kind, cfg.extras.symmetric)?
            };
            (with_penalty(g, p), Some(p))
        }
        ObjectiveKind::Lam => {
            let p = lam_regularizer(model, g, vars, &pair_data(pairs)?.pairs)?;
            (with_penalty(g, p), Some(p))
        }
        ObjectiveKind::Vrex => {
            let p = vrex_penalty(g, &domain_losses)?;
            (with_penalty(g, p), Some(p))
        }
        ObjectiveKind::GroupDro => (group_dro(g, &domain_losses)?.0, None),
        ObjectiveKind::Fish | ObjectiveKind::Iga => {
            let grads = domain_gradients(g, &domain_losses, &vars.all());
            let p = if cfg.kind == ObjectiveKind::Fish { fish_penalty(g, &grads)? } else { iga_penalty(g, &grads)? };
            (with_penalty(g, p), Some(p))
        }
        ObjectiveKind::Fishr => {
            let p = fishr_penalty(model, g, vars, batches)?;
            (with_penalty(g, p), Some(p))
        }
        ObjectiveKind::Irm => {
            let p = irm_penalty(model, g, vars, batches)?;
            (with_penalty(g, p), Some(p))
        }
        ObjectiveKind::Sd => {
            let terms: Vec<Var> = batches
                .iter()
                .map(|b| {
                    let (_, _, z) = model.record(g, vars, &b.xs);
                    sd_penalty(g, z, &b.weights)
                })
                .collect();
            let p = mean_of(g, &terms);
            (with_penalty(g, p), Some(p))
        }
        ObjectiveKind::Rsc => {
            let terms: Vec<Var> = batches.iter().map(|b| rsc_masked_loss(model, g, vars, b, cfg.q()).0).collect();
            (mean_of(g, &terms), None)
        }
        ObjectiveKind::Coral | ObjectiveKind::Mmd => {
            let sets: Vec<FeatureSet> = batches.iter().map(|b| FeatureSet::from_batch(model, g, vars, b)).collect();
            let p = if cfg.kind == ObjectiveKind::Coral {
                coral_penalty(g, &sets)?
            } else {
                mmd_penalty(g, &sets, cfg.extras.bandwidth)?.0
            };
            (with_penalty(g, p), Some(p))
        }
        ObjectiveKind::Dann | ObjectiveKind::Cdann => {
            let adv = adversaries.ok_or(Error::InvalidParameter {
                name: "adversaries",
                reason: "adversarial objectives need domain classifiers",
            })?;
            let (label, domain) = if cfg.kind == ObjectiveKind::Dann {
                dann_losses(model, g, vars, &adv.nets[0], &adv.vars[0], batches, 1.0)?
            } else {
                cdann_losses(model, g, vars, adv.nets, &adv.vars, batches, 1.0)?
            };
            let s = g.scale(domain, lambda);
            (g.add(label, s), Some(domain))
        }
        ObjectiveKind::Mixup => {
            let stream =
                mixup_stream.ok_or(Error::InvalidParameter { name: "mixup", reason: "needs a random stream" })?;
            let n = cfg.extras.mixup_samples.unwrap_or(64);
            let terms: Vec<Var> = batches
                .iter()
                .enumerate()
                .map(|(d, b)| {
                    let mixed =
                        mixup_batch(&model.embedding, b, model.n_classes(), cfg.alpha(), n, &stream.child(d as u64))?;
                    let input = g.leaf(mixed.inputs);
                    let h = model.features(g, vars, input);
                    let z = model.logits(g, vars, h);
                    let lp = g.log_softmax(z);
                    Ok(soft_nll(g, lp, &mixed.targets))
                })
                .collect::<Result<_>>()?;
            (mean_of(g, &terms), None)
        }
    };
    Ok(Built { loss, penalty, domain_losses })
}
