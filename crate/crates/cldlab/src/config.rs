//! Experiment configuration: parsing, validation and the stable hash.

use std::path::Path;

use cldlab_core::diffkit::{Activation, Embedding};
use cldlab_core::fixtures::coordinates;
use cldlab_core::objectives::{ObjectiveConfig, ObjectiveKind};
use cldlab_core::pairgen::PairStyle;
use cldlab_core::train::TrainerConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};
use crate::family::Loaded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Fixture name or path to a family document.
    pub family: String,
    #[serde(default = "default_sources")]
    pub sources: Vec<usize>,
    #[serde(default = "default_target")]
    pub target: usize,
    #[serde(default = "ObjectiveConfig::erm")]
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub trainer: TrainerConfig,
    /// Base seed of every random stream; required.
    pub seed: u64,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub eval: EvalSpec,
    /// Output directory; excluded from the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

fn default_sources() -> Vec<usize> {
    vec![0]
}

fn default_target() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingSpec {
    OneHot,
    /// `(A, B)` coordinates of the four canonical observations.
    Coordinates,
    Table {
        rows: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    /// Extractor layer widths; empty for a linear model on the embedding.
    pub hidden: Vec<usize>,
    pub embedding: EmbeddingSpec,
    pub activation: Activation,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { hidden: vec![8], embedding: EmbeddingSpec::OneHot, activation: Activation::Relu }
    }
}

impl ModelSpec {
    pub fn embedding(&self, n_obs: usize) -> Embedding {
        match &self.embedding {
            EmbeddingSpec::OneHot => Embedding::OneHot { n_obs },
            EmbeddingSpec::Coordinates => Embedding::Table { rows: coordinates() },
            EmbeddingSpec::Table { rows } => Embedding::Table { rows: rows.clone() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    /// Records sampled per source domain; train on the exact
    /// distributions when unset.
    pub train_samples: Option<usize>,
    /// Contrastive pairs drawn from each source domain.
    pub pairs: usize,
    pub pair_style: PairStyle,
    /// Pure-set composition for group objectives: number of pure elements
    /// per source domain and observations per element.
    pub pure_elements: usize,
    pub pure_reps: usize,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self { train_samples: None, pairs: 200, pair_style: PairStyle::Marginal, pure_elements: 50, pure_reps: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    /// Evaluation interval in steps; 0 evaluates only the final model.
    pub every: usize,
    /// Exact (enumerated) evaluation; sampled with `samples` records otherwise.
    pub exact: bool,
    pub samples: usize,
    /// CI index: exact through the oracle, or Monte Carlo with these settings.
    pub ci_exact: bool,
    pub ci_pairs: usize,
    pub ci_reps: usize,
    pub ci_style: PairStyle,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            every: 0,
            exact: true,
            samples: 10_000,
            ci_exact: true,
            ci_pairs: 10_000,
            ci_reps: 1,
            ci_style: PairStyle::Marginal,
        }
    }
}

fn path_error(e: serde_path_to_error::Error<serde_json::Error>) -> HarnessError {
    let path = e.path().to_string();
    HarnessError::config(if path == "." { "<root>".into() } else { path }, e.into_inner())
}

impl ExperimentConfig {
    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        serde_path_to_error::deserialize(value).map_err(path_error)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de).map_err(path_error)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Canonical JSON: sorted keys, no output path.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        // serde_json's map is ordered by key, so this is canonical
        let v = serde_json::to_value(&c).expect("config serialises");
        serde_json::to_string(&v).expect("value serialises")
    }

    /// SHA-256 of the canonical JSON, hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Checks the fields against each other and against the family.
    pub fn validate(&self, loaded: &Loaded) -> Result<()> {
        if self.sources.is_empty() {
            return Err(HarnessError::config("sources", "at least one source domain is required"));
        }
        for (i, &s) in self.sources.iter().enumerate() {
            loaded.domain(s, &format!("sources[{i}]"))?;
            if self.sources[..i].contains(&s) {
                return Err(HarnessError::config(format!("sources[{i}]"), "duplicate source domain"));
            }
        }
        loaded.domain(self.target, "target")?;
        self.trainer.validate().map_err(|e| HarnessError::config("trainer", e))?;
        self.objective.validate().map_err(|e| HarnessError::config("objective", e))?;
        let kind = self.objective.kind;
        if kind.is_multi_domain() && self.sources.len() < 2 {
            return Err(HarnessError::config("sources", format!("{} needs at least two source domains", kind.name())));
        }
        if kind.uses_pairs() {
            if self.objective.extras.groups {
                if self.data.pure_elements == 0 || self.data.pure_reps < 2 {
                    return Err(HarnessError::config(
                        "data",
                        "group objectives need pure_elements ≥ 1 and pure_reps ≥ 2",
                    ));
                }
            } else if self.data.pairs == 0 {
                return Err(HarnessError::config("data.pairs", "pair objectives need at least one pair"));
            }
        }
        if kind == ObjectiveKind::Lam && self.data.pairs == 0 {
            return Err(HarnessError::config("data.pairs", "LAM needs labelled pairs"));
        }
        if self.data.train_samples == Some(0) {
            return Err(HarnessError::config("data.train_samples", "must be positive"));
        }
        if self.model.hidden.contains(&0) {
            return Err(HarnessError::config("model.hidden", "layer widths must be positive"));
        }
        let s = loaded.family.spaces();
        match &self.model.embedding {
            EmbeddingSpec::OneHot => {}
            EmbeddingSpec::Coordinates => {
                if s.n_obs != 4 {
                    return Err(HarnessError::config(
                        "model.embedding",
                        "coordinates need the four canonical observations",
                    ));
                }
            }
            EmbeddingSpec::Table { rows } => {
                let width = rows.first().map_or(0, Vec::len);
                if rows.len() != s.n_obs || width == 0 || rows.iter().any(|r| r.len() != width) {
                    return Err(HarnessError::config(
                        "model.embedding.rows",
                        format!("need {} rows of equal positive width", s.n_obs),
                    ));
                }
            }
        }
        if !self.eval.exact && self.eval.samples == 0 {
            return Err(HarnessError::config("eval.samples", "must be positive"));
        }
        if !self.eval.ci_exact && (self.eval.ci_pairs == 0 || self.eval.ci_reps == 0) {
            return Err(HarnessError::config("eval", "ci_pairs and ci_reps must be positive"));
        }
        Ok(())
    }
}
