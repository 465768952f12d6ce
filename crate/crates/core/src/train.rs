//! Deterministic gradient training of a [`Model`] under any objective.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cld::{draw_record, CldFamily, Dataset, DomainSpec};
use crate::diffkit::{adam_step, sgd_step, Activation, AdamState, Graph, Mlp, Model};
use crate::error::{Error, Result};
use crate::objectives::{
    and_mask, build_objective, swa_average, AdversarySet, DomainBatch, ObjectiveConfig, ObjectiveKind, PairData,
};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub optimizer: Optimizer,
    pub lr: f64,
    pub steps: usize,
    /// Records per domain and step; full batch when unset.
    pub batch_size: Option<usize>,
    /// Leading steps that update only the head (linear probing before
    /// fine-tuning); 0 disables the two-phase schedule.
    pub probe_steps: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self { optimizer: Optimizer::Sgd, lr: 0.1, steps: 2000, batch_size: None, probe_steps: 0 }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidParameter { name: "lr", reason: "must be positive" });
        }
        if self.steps == 0 {
            return Err(Error::InvalidParameter { name: "steps", reason: "must be at least 1" });
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidParameter { name: "batch_size", reason: "must be positive" });
        }
        Ok(())
    }
}

/// What the model is trained on.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainData {
    /// The exact domain distributions.
    Exact(Vec<DomainSpec>),
    /// Finite samples, one per domain.
    Samples(Vec<Dataset>),
}

impl TrainData {
    fn domain_count(&self) -> usize {
        match self {
            TrainData::Exact(d) => d.len(),
            TrainData::Samples(d) => d.len(),
        }
    }
}

/// Everything a run needs besides the model and trainer settings.
#[derive(Debug, Clone)]
pub struct TrainSetup<'a> {
    pub family: &'a CldFamily,
    pub data: TrainData,
    pub objective: &'a ObjectiveConfig,
    pub pairs: Option<&'a PairData>,
    /// Root of the run's random streams.
    pub stream: Stream,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    pub adversaries: Vec<Mlp>,
    /// Training loss per step.
    pub losses: Vec<f64>,
    /// Unscaled penalty per step, when the objective has one.
    pub penalties: Vec<Option<f64>>,
}

fn batches_for_step(
    family: &CldFamily,
    data: &TrainData,
    batch_size: Option<usize>,
    stream: &Stream,
    step: usize,
) -> Result<Vec<DomainBatch>> {
    match (data, batch_size) {
        (TrainData::Exact(domains), None) => Ok(domains.iter().map(|d| DomainBatch::exact(family, d)).collect()),
        (TrainData::Samples(sets), None) => sets.iter().map(DomainBatch::from_dataset).collect(),
        (TrainData::Exact(domains), Some(b)) => domains
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let s = stream.child(step as u64).child(i as u64);
                let p_cn = d.p_cn();
                let records = (0..b as u64).map(|j| draw_record(family, d, &p_cn, &s, j)).collect();
                DomainBatch::from_dataset(&Dataset { domain_id: d.domain_id, records })
            })
            .collect(),
        (TrainData::Samples(sets), Some(b)) => sets
            .iter()
            .enumerate()
            .map(|(i, set)| {
                if set.is_empty() {
                    return Err(Error::EmptyRequest("training dataset"));
                }
                let mut rng = stream.child(step as u64).child(i as u64).at(0);
                let records = (0..b).map(|_| set.records[rand::Rng::random_range(&mut rng, 0..set.len())]).collect();
                DomainBatch::from_dataset(&Dataset { domain_id: set.domain_id, records })
            })
            .collect(),
    }
}

fn adversaries_for(cfg: &ObjectiveConfig, model: &Model, n_domains: usize, stream: &Stream) -> Vec<Mlp> {
    let count = match cfg.kind {
        ObjectiveKind::Dann => 1,
        ObjectiveKind::Cdann => model.n_classes() + 1,
        _ => 0,
    };
    (0..count)
        .map(|i| {
            let mut rng = stream.child(i as u64).at(0);
            Mlp::new(&[model.feature_dim(), cfg.adversary_hidden(), n_domains], Activation::Relu, &mut rng)
        })
        .collect()
}

/// Trains `model`, calling `observe(step, model, penalty)` after every
/// step (`step` counts completed updates, starting at 1).
pub fn train<F>(mut model: Model, setup: &TrainSetup, cfg: &TrainerConfig, mut observe: F) -> Result<TrainOutcome>
where
    F: FnMut(usize, &Model, Option<f64>) -> Result<()>,
{
    cfg.validate()?;
    setup.objective.validate()?;
    let obj = setup.objective;
    let n_domains = setup.data.domain_count();
    if n_domains == 0 {
        return Err(Error::TooFewDomains { needed: 1, got: 0 });
    }
    if obj.kind.is_multi_domain() && n_domains < 2 {
        return Err(Error::TooFewDomains { needed: 2, got: n_domains });
    }
    let data_stream = setup.stream.named("data");
    let mixup_stream = setup.stream.named("mixup");
    let mut adversaries = adversaries_for(obj, &model, n_domains, &setup.stream.named("init").named("adversary"));

    let n_model = model.param_count();
    let head_start = n_model - model.head.len();
    let mut flat: Vec<f64> = model.flat();
    for a in &adversaries {
        flat.extend(a.flat());
    }
    let mut adam = AdamState::new(flat.len());
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut penalties = Vec::with_capacity(cfg.steps);
    let mut snapshots: Vec<Model> = Vec::new();
    let swa_start = obj.extras.swa_start.unwrap_or(cfg.steps / 2);
    let swa_every = obj.extras.swa_every.unwrap_or(10);

    for step in 0..cfg.steps {
        let batches = batches_for_step(setup.family, &setup.data, cfg.batch_size, &data_stream, step)?;
        for b in &batches {
            b.check_labels(model.n_classes())?;
        }
        let mut g = Graph::new();
        let vars = model.bind(&mut g);
        let adv_vars: Vec<_> = adversaries.iter().map(|a| a.bind(&mut g)).collect();
        let adv = AdversarySet { nets: &adversaries, vars: adv_vars.clone() };
        let step_mixup = mixup_stream.child(step as u64);
        let built = build_objective(
            obj,
            &model,
            &mut g,
            &vars,
            &batches,
            setup.pairs,
            (!adversaries.is_empty()).then_some(&adv),
            Some(&step_mixup),
        )?;
        let loss = g.scalar(built.loss);
        if !loss.is_finite() {
            return Err(Error::NonFiniteActivation("training loss"));
        }
        let penalty = built.penalty.map(|p| g.scalar(p));
        let mut leaves = vars.all();
        leaves.extend(adv_vars.iter().flatten().copied());
        let mut grad: Vec<f64> = if obj.kind == ObjectiveKind::AndMask {
            let per_domain: Vec<Vec<f64>> = built
                .domain_losses
                .iter()
                .map(|&l| {
                    let gs = g.grad(l, &leaves);
                    gs.iter().flat_map(|&v| g.value(v).data.clone()).collect()
                })
                .collect();
            and_mask(&per_domain, obj.tau())?
        } else {
            let gs = g.grad(built.loss, &leaves);
            gs.iter().flat_map(|&v| g.value(v).data.clone()).collect()
        };
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation("gradient"));
        }
        if step < cfg.probe_steps {
            grad[..head_start].iter_mut().for_each(|v| *v = 0.0);
        }
        match cfg.optimizer {
            Optimizer::Sgd => sgd_step(&mut flat, &grad, cfg.lr),
            Optimizer::Adam => adam_step(&mut flat, &mut adam, &grad, cfg.lr),
        }
        model.set_flat(&flat[..n_model]);
        let mut at = n_model;
        for a in &mut adversaries {
            let n = a.param_count();
            a.set_flat(&flat[at..at + n]);
            at += n;
        }
        losses.push(loss);
        penalties.push(penalty);
        let done = step + 1;
        if obj.kind == ObjectiveKind::Swa && done > swa_start && (done - swa_start).is_multiple_of(swa_every) {
            snapshots.push(model.clone());
        }
        observe(done, &model, penalty)?;
    }
    if obj.kind == ObjectiveKind::Swa && snapshots.len() >= 2 {
        model = swa_average(&snapshots)?;
    }
    Ok(TrainOutcome { model, adversaries, losses, penalties })
}
