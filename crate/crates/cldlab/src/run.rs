//! Deterministic experiment execution.

use std::path::Path;

use cldlab_core::cld::{sample_dataset, Dataset, DomainSpec};
use cldlab_core::diffkit::Model;
use cldlab_core::metrics::{ci_index_mc, domain_accuracy, evaluate, evaluate_exact, EvalResult};
use cldlab_core::objectives::{DomainBatch, PairData};
use cldlab_core::oracle::{bayes_predictor, exact_ci_index, exact_loss, is_causal_invariant, optimal_causal_faithful};
use cldlab_core::pairgen::{compose_pure, sample_pairs};
use cldlab_core::rng::Stream;
use cldlab_core::train::{train, TrainData, TrainSetup};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::family::{load_family, Loaded};

/// Tolerance of the tabulated-model invariance check in summaries.
pub const INVARIANCE_TOLERANCE: f64 = 1e-2;

/// One line of the results CSV; field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run_id: String,
    pub config_hash: String,
    pub step: usize,
    pub domain_id: usize,
    pub split: Split,
    pub loss_nats: f64,
    pub accuracy: f64,
    pub ci_index: f64,
    pub penalty_value: Option<f64>,
    pub penalty_kind: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Source,
    Target,
    Other,
}

/// Final numbers of a run next to the oracle references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub objective: String,
    pub lambda: f64,
    pub steps: usize,
    pub source: Vec<EvalResult>,
    pub target: EvalResult,
    /// Exact CI index of the final model on the first source domain.
    pub ci_index: f64,
    /// Largest disagreement of the tabulated model within a core class.
    pub invariance_deviation: f64,
    pub source_bayes_loss: f64,
    pub causal_faithful_target_loss: f64,
    pub causal_faithful_degenerate: bool,
    /// Accuracy of the (first) domain adversary on the training batches.
    pub adversary_accuracy: Option<f64>,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub config: ExperimentConfig,
    pub rows: Vec<ResultRow>,
    pub summary: Summary,
    pub model: Model,
}

/// `<first 16 hex digits of the config hash>-<seed>`.
pub fn run_id(config_hash: &str, seed: u64) -> String {
    format!("{}-{seed}", &config_hash[..16])
}

/// A validated config with its family resolved.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub loaded: Loaded,
    pub sources: Vec<DomainSpec>,
    pub target: DomainSpec,
}

impl Prepared {
    pub fn new(config: ExperimentConfig, base: Option<&Path>) -> Result<Self> {
        let loaded = load_family(&config.family, base, "family")?;
        config.validate(&loaded)?;
        let sources =
            config.sources.iter().map(|&s| loaded.domain(s, "sources").cloned()).collect::<Result<Vec<_>>>()?;
        let target = loaded.domain(config.target, "target")?.clone();
        Ok(Self { config, loaded, sources, target })
    }

    pub fn stream(&self) -> Stream {
        Stream::new(self.config.seed)
    }

    /// Source datasets drawn from the `data` stream, one per source.
    pub fn source_samples(&self, n: usize) -> Result<Vec<Dataset>> {
        let data = self.stream().named("data");
        self.sources
            .iter()
            .enumerate()
            .map(|(i, d)| Ok(sample_dataset(&self.loaded.family, d, n, data.seed_at(i as u64))?))
            .collect()
    }

    pub fn train_data(&self) -> Result<TrainData> {
        Ok(match self.config.data.train_samples {
            Some(n) => TrainData::Samples(self.source_samples(n)?),
            None => TrainData::Exact(self.sources.clone()),
        })
    }

    /// Labelled pairs (and pure-set groups) from every source domain.
    pub fn pair_data(&self) -> Result<PairData> {
        let d = &self.config.data;
        let stream = self.stream().named("pairs");
        let mut out = PairData::default();
        for (i, src) in self.sources.iter().enumerate() {
            if d.pairs > 0 {
                let seed = stream.seed_at(i as u64);
                out.pairs.extend(sample_pairs(&self.loaded.family, src, d.pairs, d.pair_style, true, seed)?);
            }
            if self.config.objective.extras.groups {
                let n_core = self.loaded.family.spaces().n_core;
                let pure: Vec<usize> = (0..d.pure_elements).map(|j| j % n_core).collect();
                let seed = stream.named("pure").seed_at(i as u64);
                let comp = compose_pure(&self.loaded.family, &pure, src, d.pure_reps, seed)?;
                out.groups.extend(comp.groups);
            }
        }
        Ok(out)
    }

    pub fn initial_model(&self) -> Model {
        let s = self.loaded.family.spaces();
        let mut rng = self.stream().named("init").at(0);
        Model::new(
            self.config.model.embedding(s.n_obs),
            &self.config.model.hidden,
            s.n_classes,
            self.config.model.activation,
            &mut rng,
        )
    }

    /// Loss and accuracy on `domain`, exact or sampled from the `eval` stream.
    pub fn evaluate(&self, model: &Model, domain: &DomainSpec) -> Result<EvalResult> {
        let e = &self.config.eval;
        Ok(if e.exact {
            evaluate_exact(model, &self.loaded.family, domain)?
        } else {
            let seed = self.stream().named("eval").seed_at(domain.domain_id as u64);
            evaluate(model, &self.loaded.family, domain, e.samples, seed)?
        })
    }

    pub fn ci_index(&self, model: &Model, domain: &DomainSpec) -> Result<f64> {
        let e = &self.config.eval;
        Ok(if e.ci_exact {
            exact_ci_index(&self.loaded.family, domain, &model.predictor_table()?)
        } else {
            let seed = self.stream().named("eval").named("ci").seed_at(domain.domain_id as u64);
            ci_index_mc(model, &self.loaded.family, domain, e.ci_pairs, e.ci_reps, e.ci_style, seed)?.value
        })
    }

    fn rows_at(
        &self,
        step: usize,
        model: &Model,
        penalty: Option<f64>,
        id: &str,
        hash: &str,
    ) -> Result<Vec<ResultRow>> {
        let mut rows = Vec::with_capacity(self.sources.len() + 1);
        let evaluated =
            self.sources.iter().map(|d| (d, Split::Source)).chain(std::iter::once((&self.target, Split::Target)));
        for (d, split) in evaluated {
            let r = self.evaluate(model, d)?;
            rows.push(ResultRow {
                run_id: id.to_string(),
                config_hash: hash.to_string(),
                step,
                domain_id: d.domain_id,
                split,
                loss_nats: r.loss,
                accuracy: r.accuracy,
                ci_index: self.ci_index(model, d)?,
                penalty_value: penalty,
                penalty_kind: self.config.objective.kind.name().to_string(),
                seed: self.config.seed,
            });
        }
        Ok(rows)
    }

    /// Trains per the config, evaluating at the configured interval.
    pub fn run(&self) -> Result<ResultRecord> {
        let cfg = &self.config;
        let hash = cfg.hash();
        let id = run_id(&hash, cfg.seed);
        let data = self.train_data()?;
        let pairs = self.pair_data()?;
        let setup = TrainSetup {
            family: &self.loaded.family,
            data: data.clone(),
            objective: &cfg.objective,
            pairs: Some(&pairs),
            stream: self.stream(),
        };
        let model = self.initial_model();
        let mut rows = Vec::new();
        let every = cfg.eval.every;
        if every > 0 {
            rows.extend(self.rows_at(0, &model, None, &id, &hash)?);
        }
        let steps = cfg.trainer.steps;
        let mut eval_err = None;
        let outcome = train(model, &setup, &cfg.trainer, |step, m, penalty| {
            if every > 0 && step % every == 0 && step != steps {
                match self.rows_at(step, m, penalty, &id, &hash) {
                    Ok(r) => rows.extend(r),
                    Err(e) => {
                        eval_err = Some(e);
                        return Err(cldlab_core::Error::EmptyRequest("evaluation"));
                    }
                }
            }
            Ok(())
        });
        if let Some(e) = eval_err {
            return Err(e);
        }
        let outcome = outcome?;
        let model = outcome.model;
        let final_penalty = outcome.penalties.last().copied().flatten();
        // SWA replaces the last iterate, so the final rows come from the returned model
        rows.extend(self.rows_at(steps, &model, final_penalty, &id, &hash)?);

        let family = &self.loaded.family;
        let first = &self.sources[0];
        let cf = optimal_causal_faithful(family, first);
        let adversary_accuracy = match outcome.adversaries.first() {
            Some(adv) if self.sources.len() >= 2 => {
                let batches: Vec<DomainBatch> = match &data {
                    TrainData::Exact(d) => d.iter().map(|s| DomainBatch::exact(family, s)).collect(),
                    TrainData::Samples(s) => {
                        s.iter().map(DomainBatch::from_dataset).collect::<std::result::Result<_, _>>()?
                    }
                };
                Some(domain_accuracy(&model, adv, &batches)?)
            }
            _ => None,
        };
        let table = model.predictor_table()?;
        let summary = Summary {
            run_id: id,
            config_hash: hash,
            seed: cfg.seed,
            objective: cfg.objective.kind.name().to_string(),
            lambda: cfg.objective.lambda,
            steps,
            source: self.sources.iter().map(|d| self.evaluate(&model, d)).collect::<Result<_>>()?,
            target: self.evaluate(&model, &self.target)?,
            ci_index: exact_ci_index(family, first, &table),
            invariance_deviation: is_causal_invariant(family, &table, INVARIANCE_TOLERANCE).max_deviation,
            source_bayes_loss: exact_loss(family, first, &bayes_predictor(family, first).table),
            causal_faithful_target_loss: exact_loss(family, &self.target, &cf.table),
            causal_faithful_degenerate: cf.degenerate,
            adversary_accuracy,
            final_train_loss: outcome.losses.last().copied().unwrap_or(f64::NAN),
        };
        Ok(ResultRecord { config: cfg.clone(), rows, summary, model })
    }
}

/// Validates and runs `config`; relative family paths resolve against `base`.
pub fn run_experiment(config: &ExperimentConfig, base: Option<&Path>) -> Result<ResultRecord> {
    Prepared::new(config.clone(), base)?.run()
}
