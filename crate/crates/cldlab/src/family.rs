//! JSON documents describing a family and its domains.
//!
//! ```json
//! {
//!   "spaces": {"n_core": 2, "n_noncore": 2, "n_obs": 4, "n_classes": 2},
//!   "p_x_given_cn": [[[1,0,0,0],[0,1,0,0]],[[0,0,1,0],[0,0,0,1]]],
//!   "p_y_given_c": [[0.75,0.25],[0.25,0.75]],
//!   "domains": [
//!     {"variant": "CLD2", "p_cn": [[0.475,0.025],[0.025,0.475]]},
//!     {"variant": "CLD3", "p_y": [0.5,0.5], "p_c_given_y": [[0.9,0.1],[0.1,0.9]],
//!      "p_n_given_c": [[0.7,0.3],[0.3,0.7]]}
//!   ]
//! }
//! ```
//!
//! Tables are row-major nested arrays. Domain ids are positions in
//! `domains` unless given explicitly with `"id"`.

use std::path::Path;

use cldlab_core::cld::{CldFamily, DomainSpec, LatentLaw, LatentSpaces, Variant};
use cldlab_core::fixtures::{agreement_domain, canonical_fixture, Fixture, SOURCE_AGREEMENT, TARGET_AGREEMENT};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyDoc {
    pub spaces: LatentSpaces,
    pub p_x_given_cn: Vec<Vec<Vec<f64>>>,
    pub p_y_given_c: Vec<Vec<f64>>,
    pub domains: Vec<DomainDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DomainDoc {
    Joint {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<usize>,
        variant: Variant,
        p_cn: Vec<Vec<f64>>,
    },
    AntiCausal {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<usize>,
        variant: Variant,
        p_y: Vec<f64>,
        p_c_given_y: Vec<Vec<f64>>,
        p_n_given_c: Vec<Vec<f64>>,
    },
}

/// A family with its domains, in document order.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub family: CldFamily,
    pub domains: Vec<DomainSpec>,
}

impl Loaded {
    pub fn domain(&self, id: usize, field: &str) -> Result<&DomainSpec> {
        self.domains
            .iter()
            .find(|d| d.domain_id == id)
            .ok_or_else(|| HarnessError::config(field, format!("no domain with id {id}")))
    }
}

/// Name of the built-in suite with two CANON-D sources (agreements 0.95
/// and 0.80) and the CANON-D target as domain 2.
pub const TWO_SOURCE: &str = "CANON-D-2S";

/// Second source agreement of [`TWO_SOURCE`].
pub const SECOND_SOURCE_AGREEMENT: f64 = 0.80;

fn chunk(flat: &[f64], width: usize) -> Vec<Vec<f64>> {
    flat.chunks(width).map(<[f64]>::to_vec).collect()
}

impl FamilyDoc {
    pub fn from_family(family: &CldFamily, domains: &[DomainSpec]) -> Self {
        let s = *family.spaces();
        let p_x_given_cn =
            (0..s.n_core).map(|c| (0..s.n_noncore).map(|n| family.p_x(c, n).to_vec()).collect()).collect();
        let p_y_given_c = (0..s.n_core).map(|c| family.p_y(c).to_vec()).collect();
        let domains = domains
            .iter()
            .map(|d| match d.law() {
                LatentLaw::Joint { p_cn } => {
                    DomainDoc::Joint { id: Some(d.domain_id), variant: d.variant(), p_cn: chunk(p_cn, s.n_noncore) }
                }
                LatentLaw::AntiCausal { p_y, p_c_given_y, p_n_given_c } => DomainDoc::AntiCausal {
                    id: Some(d.domain_id),
                    variant: Variant::Cld3,
                    p_y: p_y.clone(),
                    p_c_given_y: chunk(p_c_given_y, s.n_core),
                    p_n_given_c: chunk(p_n_given_c, s.n_noncore),
                },
            })
            .collect();
        Self { spaces: s, p_x_given_cn, p_y_given_c, domains }
    }

    pub fn build(&self, field: &str) -> Result<Loaded> {
        let s = self.spaces;
        LatentSpaces::new(s.n_core, s.n_noncore, s.n_obs, s.n_classes)
            .map_err(|e| HarnessError::config(format!("{field}.spaces"), e))?;
        let family = CldFamily::new(self.spaces, &self.p_x_given_cn, &self.p_y_given_c)
            .map_err(|e| HarnessError::config(field, e))?;
        let mut domains = Vec::with_capacity(self.domains.len());
        for (i, d) in self.domains.iter().enumerate() {
            let at = format!("{field}.domains[{i}]");
            let spec = match d {
                DomainDoc::Joint { id, variant, p_cn } => DomainSpec::joint(&family, id.unwrap_or(i), *variant, p_cn),
                DomainDoc::AntiCausal { id, variant, p_y, p_c_given_y, p_n_given_c } => {
                    if *variant != Variant::Cld3 {
                        return Err(HarnessError::config(at, "anti-causal tables need variant CLD3"));
                    }
                    DomainSpec::anti_causal(&family, id.unwrap_or(i), p_y, p_c_given_y, p_n_given_c)
                }
            }
            .map_err(|e| HarnessError::config(&at, e))?;
            if domains.iter().any(|o: &DomainSpec| o.domain_id == spec.domain_id) {
                return Err(HarnessError::config(at, format!("duplicate domain id {}", spec.domain_id)));
            }
            domains.push(spec);
        }
        Ok(Loaded { family, domains })
    }
}

pub fn builtin(name: &str) -> Option<Loaded> {
    if name == TWO_SOURCE {
        let fx = canonical_fixture(Fixture::CanonD);
        let a = agreement_domain(&fx.family, 0, SOURCE_AGREEMENT).expect("valid agreement");
        let b = agreement_domain(&fx.family, 1, SECOND_SOURCE_AGREEMENT).expect("valid agreement");
        let t = agreement_domain(&fx.family, 2, TARGET_AGREEMENT).expect("valid agreement");
        return Some(Loaded { family: fx.family, domains: vec![a, b, t] });
    }
    let f: Fixture = name.parse().ok()?;
    let fx = canonical_fixture(f);
    Some(Loaded { family: fx.family, domains: vec![fx.source, fx.target] })
}

/// Resolves a fixture name (`CANON-D`, `CANON-N`, `CANON-L`, `CANON-D-2S`)
/// or a path to a family document. Relative paths resolve against `base`.
pub fn load_family(source: &str, base: Option<&Path>, field: &str) -> Result<Loaded> {
    if let Some(l) = builtin(source) {
        return Ok(l);
    }
    let path = match base {
        Some(b) if Path::new(source).is_relative() => b.join(source),
        _ => Path::new(source).to_path_buf(),
    };
    if !path.exists() {
        return Err(HarnessError::config(field, format!("{source:?} is neither a fixture name nor an existing file")));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    let doc: FamilyDoc = serde_json::from_str(&text).map_err(|e| HarnessError::config(field, e))?;
    doc.build(field)
}
