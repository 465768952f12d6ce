//! Discrete causal latent-decomposition families, their domains, and
//! ancestral sampling.
//!
//! A family fixes the two invariant mechanisms: the generation channel from
//! core/non-core factors to observations, and the labelling channel from core
//! factors to classes. A domain fixes how the latent factors themselves are
//! distributed. Everything is finite and stored as row-major `f64` tables.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{categorical, Stream};

/// Row-sum tolerance for caller-supplied tables.
pub const INPUT_TOLERANCE: f64 = 1e-9;
/// Tolerance for tables the library builds itself.
pub const INTERNAL_TOLERANCE: f64 = 1e-12;

/// Sizes of the finite latent, observation and label spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentSpaces {
    pub n_core: usize,
    pub n_noncore: usize,
    pub n_obs: usize,
    pub n_classes: usize,
}

impl LatentSpaces {
    pub fn new(n_core: usize, n_noncore: usize, n_obs: usize, n_classes: usize) -> Result<Self> {
        if n_core == 0 || n_noncore == 0 || n_obs == 0 {
            return Err(Error::InvalidSpaces("every space needs at least one value"));
        }
        if n_classes < 2 {
            return Err(Error::InvalidSpaces("at least two classes are required"));
        }
        Ok(Self { n_core, n_noncore, n_obs, n_classes })
    }
}

/// Checks that `rows` consecutive chunks of `width` entries are distributions.
pub(crate) fn check_rows(what: &'static str, flat: &[f64], width: usize, tol: f64) -> Result<()> {
    for (row, chunk) in flat.chunks(width).enumerate() {
        let mut sum = 0.0;
        for &p in chunk {
            if !(0.0..=1.0 + tol).contains(&p) || !p.is_finite() {
                return Err(Error::NotStochastic { what, row, sum: p });
            }
            sum += p;
        }
        if (sum - 1.0).abs() > tol {
            return Err(Error::NotStochastic { what, row, sum });
        }
    }
    Ok(())
}

fn flatten2(what: &'static str, rows: &[Vec<f64>], n_rows: usize, width: usize) -> Result<Vec<f64>> {
    if rows.len() != n_rows {
        return Err(Error::ShapeMismatch { what, expected: n_rows, found: rows.len() });
    }
    let mut out = Vec::with_capacity(n_rows * width);
    for r in rows {
        if r.len() != width {
            return Err(Error::ShapeMismatch { what, expected: width, found: r.len() });
        }
        out.extend_from_slice(r);
    }
    Ok(out)
}

/// The invariant mechanisms `P*(X | X^c, X^n)` and `P*(Y | X^c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CldFamily {
    spaces: LatentSpaces,
    p_x_given_cn: Vec<f64>,
    p_y_given_c: Vec<f64>,
}

impl CldFamily {
    /// Validates nested tables `[core][noncore][obs]` and `[core][class]`.
    pub fn new(spaces: LatentSpaces, p_x_given_cn: &[Vec<Vec<f64>>], p_y_given_c: &[Vec<f64>]) -> Result<Self> {
        if p_x_given_cn.len() != spaces.n_core {
            return Err(Error::ShapeMismatch {
                what: "p_x_given_cn",
                expected: spaces.n_core,
                found: p_x_given_cn.len(),
            });
        }
        let mut gen = Vec::with_capacity(spaces.n_core * spaces.n_noncore * spaces.n_obs);
        for plane in p_x_given_cn {
            gen.extend(flatten2("p_x_given_cn", plane, spaces.n_noncore, spaces.n_obs)?);
        }
        let lab = flatten2("p_y_given_c", p_y_given_c, spaces.n_core, spaces.n_classes)?;
        Self::from_flat(spaces, gen, lab, INPUT_TOLERANCE)
    }

    pub(crate) fn from_flat(
        spaces: LatentSpaces,
        p_x_given_cn: Vec<f64>,
        p_y_given_c: Vec<f64>,
        tol: f64,
    ) -> Result<Self> {
        let expect = spaces.n_core * spaces.n_noncore * spaces.n_obs;
        if p_x_given_cn.len() != expect {
            return Err(Error::ShapeMismatch { what: "p_x_given_cn", expected: expect, found: p_x_given_cn.len() });
        }
        if p_y_given_c.len() != spaces.n_core * spaces.n_classes {
            return Err(Error::ShapeMismatch {
                what: "p_y_given_c",
                expected: spaces.n_core * spaces.n_classes,
                found: p_y_given_c.len(),
            });
        }
        check_rows("p_x_given_cn", &p_x_given_cn, spaces.n_obs, tol)?;
        check_rows("p_y_given_c", &p_y_given_c, spaces.n_classes, tol)?;
        Ok(Self { spaces, p_x_given_cn, p_y_given_c })
    }

    pub fn spaces(&self) -> &LatentSpaces {
        &self.spaces
    }

    /// `P*(X | c, n)` as a row over observations.
    pub fn p_x(&self, c: usize, n: usize) -> &[f64] {
        let w = self.spaces.n_obs;
        let start = (c * self.spaces.n_noncore + n) * w;
        &self.p_x_given_cn[start..start + w]
    }

    /// `P*(Y | c)` as a row over classes.
    pub fn p_y(&self, c: usize) -> &[f64] {
        let k = self.spaces.n_classes;
        &self.p_y_given_c[c * k..(c + 1) * k]
    }

    /// True iff every generation row is a point mass.
    pub fn is_deterministic(&self) -> bool {
        self.p_x_given_cn
            .chunks(self.spaces.n_obs)
            .all(|row| row.iter().filter(|&&p| p > 0.0).count() == 1 && row.contains(&1.0))
    }

    /// For each observation, the unique core value that can generate it, if
    /// there is exactly one. Observations no latent pair reaches map to `None`
    /// as do observations reachable from two different core values.
    pub fn core_of_observation(&self) -> Vec<Option<usize>> {
        let s = &self.spaces;
        let mut owner: Vec<Option<Option<usize>>> = vec![None; s.n_obs];
        for c in 0..s.n_core {
            for n in 0..s.n_noncore {
                for (x, &p) in self.p_x(c, n).iter().enumerate() {
                    if p > 0.0 {
                        owner[x] = match owner[x] {
                            None => Some(Some(c)),
                            Some(Some(prev)) if prev == c => Some(Some(c)),
                            _ => Some(None),
                        };
                    }
                }
            }
        }
        owner.into_iter().map(|o| o.flatten()).collect()
    }

    /// True iff every reachable observation identifies its core value.
    pub fn is_core_recoverable(&self) -> bool {
        let owners = self.core_of_observation();
        let reach = self.reachable_observations();
        owners.iter().zip(&reach).all(|(o, &r)| !r || o.is_some())
    }

    /// Observations with positive probability under some latent pair.
    pub fn reachable_observations(&self) -> Vec<bool> {
        let mut reach = vec![false; self.spaces.n_obs];
        for row in self.p_x_given_cn.chunks(self.spaces.n_obs) {
            for (x, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    reach[x] = true;
                }
            }
        }
        reach
    }

    /// Partition of observations into classes that any causal-invariant
    /// predictor must treat identically. Two observations share a class when
    /// both can be generated from the same core value. Unreachable
    /// observations get their own singleton class.
    pub fn invariance_classes(&self) -> Vec<usize> {
        let s = &self.spaces;
        let mut parent: Vec<usize> = (0..s.n_obs).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for c in 0..s.n_core {
            let mut first: Option<usize> = None;
            for n in 0..s.n_noncore {
                for (x, &p) in self.p_x(c, n).iter().enumerate() {
                    if p <= 0.0 {
                        continue;
                    }
                    match first {
                        None => first = Some(x),
                        Some(f) => {
                            let (a, b) = (find(&mut parent, f), find(&mut parent, x));
                            if a != b {
                                parent[a.max(b)] = a.min(b);
                            }
                        }
                    }
                }
            }
        }
        // relabel roots densely in order of first appearance
        let mut label = vec![usize::MAX; s.n_obs];
        let mut next = 0;
        let mut out = vec![0; s.n_obs];
        for x in 0..s.n_obs {
            let r = find(&mut parent, x);
            if label[r] == usize::MAX {
                label[r] = next;
                next += 1;
            }
            out[x] = label[r];
        }
        out
    }
}

/// Structural variant a domain was built under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "CLD")]
    Cld,
    #[serde(rename = "CLD1")]
    Cld1,
    #[serde(rename = "CLD2")]
    Cld2,
    #[serde(rename = "CLD3")]
    Cld3,
}

/// How a domain distributes its latent factors.
#[derive(Debug, Clone, PartialEq)]
pub enum LatentLaw {
    /// `P^d(X^c, X^n)` given directly; labels follow the family's `P*(Y|X^c)`.
    Joint { p_cn: Vec<f64> },
    /// Anti-causal factorisation `P^d(Y) P*(X^c|Y) P^d(X^n|X^c)`.
    AntiCausal { p_y: Vec<f64>, p_c_given_y: Vec<f64>, p_n_given_c: Vec<f64> },
}

/// One domain of a family.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub domain_id: usize,
    variant: Variant,
    spaces: LatentSpaces,
    law: LatentLaw,
}

impl DomainSpec {
    /// A CLD, CLD1 or CLD2 domain from a nested `[core][noncore]` joint.
    pub fn joint(family: &CldFamily, domain_id: usize, variant: Variant, p_cn: &[Vec<f64>]) -> Result<Self> {
        let s = *family.spaces();
        let flat = flatten2("p_cn", p_cn, s.n_core, s.n_noncore)?;
        Self::joint_flat(&s, domain_id, variant, flat, INPUT_TOLERANCE)
    }

    pub(crate) fn joint_flat(
        spaces: &LatentSpaces,
        domain_id: usize,
        variant: Variant,
        p_cn: Vec<f64>,
        tol: f64,
    ) -> Result<Self> {
        if variant == Variant::Cld3 {
            return Err(Error::InvalidParameter {
                name: "variant",
                reason: "CLD3 domains are specified through DomainSpec::anti_causal",
            });
        }
        if p_cn.len() != spaces.n_core * spaces.n_noncore {
            return Err(Error::ShapeMismatch {
                what: "p_cn",
                expected: spaces.n_core * spaces.n_noncore,
                found: p_cn.len(),
            });
        }
        check_rows("p_cn", &p_cn, p_cn.len(), tol)?;
        Ok(Self { domain_id, variant, spaces: *spaces, law: LatentLaw::Joint { p_cn } })
    }

    /// A CLD3 domain from `P^d(Y)`, the shared `P*(X^c|Y)` and `P^d(X^n|X^c)`.
    pub fn anti_causal(
        family: &CldFamily,
        domain_id: usize,
        p_y: &[f64],
        p_c_given_y: &[Vec<f64>],
        p_n_given_c: &[Vec<f64>],
    ) -> Result<Self> {
        let s = *family.spaces();
        if p_y.len() != s.n_classes {
            return Err(Error::ShapeMismatch { what: "p_y", expected: s.n_classes, found: p_y.len() });
        }
        let cy = flatten2("p_c_given_y", p_c_given_y, s.n_classes, s.n_core)?;
        let nc = flatten2("p_n_given_c", p_n_given_c, s.n_core, s.n_noncore)?;
        Self::anti_causal_flat(&s, domain_id, p_y.to_vec(), cy, nc, INPUT_TOLERANCE)
    }

    pub(crate) fn anti_causal_flat(
        spaces: &LatentSpaces,
        domain_id: usize,
        p_y: Vec<f64>,
        p_c_given_y: Vec<f64>,
        p_n_given_c: Vec<f64>,
        tol: f64,
    ) -> Result<Self> {
        check_rows("p_y", &p_y, spaces.n_classes, tol)?;
        check_rows("p_c_given_y", &p_c_given_y, spaces.n_core, tol)?;
        check_rows("p_n_given_c", &p_n_given_c, spaces.n_noncore, tol)?;
        Ok(Self {
            domain_id,
            variant: Variant::Cld3,
            spaces: *spaces,
            law: LatentLaw::AntiCausal { p_y, p_c_given_y, p_n_given_c },
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn law(&self) -> &LatentLaw {
        &self.law
    }

    pub fn spaces(&self) -> &LatentSpaces {
        &self.spaces
    }

    /// `P^d(X^c, X^n)`, flat `[core][noncore]`.
    pub fn p_cn(&self) -> Vec<f64> {
        let s = &self.spaces;
        match &self.law {
            LatentLaw::Joint { p_cn } => p_cn.clone(),
            LatentLaw::AntiCausal { p_y, p_c_given_y, p_n_given_c } => {
                let mut out = vec![0.0; s.n_core * s.n_noncore];
                for c in 0..s.n_core {
                    let pc: f64 = (0..s.n_classes).map(|y| p_y[y] * p_c_given_y[y * s.n_core + c]).sum();
                    for n in 0..s.n_noncore {
                        out[c * s.n_noncore + n] = pc * p_n_given_c[c * s.n_noncore + n];
                    }
                }
                out
            }
        }
    }

    /// `P^d(X^c)`.
    pub fn p_c(&self) -> Vec<f64> {
        let s = &self.spaces;
        let cn = self.p_cn();
        (0..s.n_core).map(|c| cn[c * s.n_noncore..(c + 1) * s.n_noncore].iter().sum()).collect()
    }

    /// `P^d(X^n)`.
    pub fn p_n(&self) -> Vec<f64> {
        let s = &self.spaces;
        let cn = self.p_cn();
        (0..s.n_noncore).map(|n| (0..s.n_core).map(|c| cn[c * s.n_noncore + n]).sum()).collect()
    }

    /// `P^d(X^c, X^n, Y)`, flat `[core][noncore][class]`.
    pub fn p_cny(&self, family: &CldFamily) -> Vec<f64> {
        let s = &self.spaces;
        let k = s.n_classes;
        let mut out = vec![0.0; s.n_core * s.n_noncore * k];
        match &self.law {
            LatentLaw::Joint { p_cn } => {
                for c in 0..s.n_core {
                    let py = family.p_y(c);
                    for n in 0..s.n_noncore {
                        let m = p_cn[c * s.n_noncore + n];
                        for y in 0..k {
                            out[(c * s.n_noncore + n) * k + y] = m * py[y];
                        }
                    }
                }
            }
            LatentLaw::AntiCausal { p_y, p_c_given_y, p_n_given_c } => {
                for c in 0..s.n_core {
                    for n in 0..s.n_noncore {
                        let pn = p_n_given_c[c * s.n_noncore + n];
                        for y in 0..k {
                            out[(c * s.n_noncore + n) * k + y] = p_y[y] * p_c_given_y[y * s.n_core + c] * pn;
                        }
                    }
                }
            }
        }
        out
    }

    /// `P^d(X, Y)`, flat `[obs][class]`.
    pub fn p_xy(&self, family: &CldFamily) -> Vec<f64> {
        let s = &self.spaces;
        let k = s.n_classes;
        let cny = self.p_cny(family);
        let mut out = vec![0.0; s.n_obs * k];
        for c in 0..s.n_core {
            for n in 0..s.n_noncore {
                let base = (c * s.n_noncore + n) * k;
                for (x, &px) in family.p_x(c, n).iter().enumerate() {
                    if px == 0.0 {
                        continue;
                    }
                    for y in 0..k {
                        out[x * k + y] += px * cny[base + y];
                    }
                }
            }
        }
        out
    }
}

/// Result of comparing the shared-marginal constraints of a domain set.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceReport {
    pub variant: Variant,
    pub pairs: Vec<PairCoherence>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCoherence {
    pub first: usize,
    pub second: usize,
    pub pass: bool,
    pub deviation: f64,
}

impl CoherenceReport {
    pub fn pass(&self) -> bool {
        self.pairs.iter().all(|p| p.pass)
    }

    pub fn max_deviation(&self) -> f64 {
        self.pairs.iter().map(|p| p.deviation).fold(0.0, f64::max)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Checks the cross-domain sharing constraint of the domains' variant:
/// equal `P(X^c)` for CLD2, equal `P*(X^c|Y)` for CLD3, nothing otherwise.
pub fn check_family_coherence(domains: &[DomainSpec]) -> Result<CoherenceReport> {
    if domains.len() < 2 {
        return Err(Error::TooFewDomains { needed: 2, got: domains.len() });
    }
    let variant = domains[0].variant;
    if let Some(other) = domains.iter().find(|d| d.variant != variant) {
        return Err(Error::MixedVariants { first: variant, other: other.variant });
    }
    let shared: Vec<Vec<f64>> = domains
        .iter()
        .map(|d| match (&d.law, variant) {
            (_, Variant::Cld2) => d.p_c(),
            (LatentLaw::AntiCausal { p_c_given_y, .. }, Variant::Cld3) => p_c_given_y.clone(),
            _ => Vec::new(),
        })
        .collect();
    let mut pairs = Vec::new();
    for i in 0..domains.len() {
        for j in i + 1..domains.len() {
            let deviation = max_abs_diff(&shared[i], &shared[j]);
            pairs.push(PairCoherence {
                first: domains[i].domain_id,
                second: domains[j].domain_id,
                pass: deviation <= INTERNAL_TOLERANCE,
                deviation,
            });
        }
    }
    Ok(CoherenceReport { variant, pairs })
}

/// Hidden latent values behind a sampled record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub core: usize,
    pub noncore: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Record {
    pub x: usize,
    pub y: usize,
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub domain_id: usize,
    pub records: Vec<Record>,
}

impl Dataset {
    /// Builds a dataset from observed `(x, y)` pairs, checking index bounds.
    pub fn observed(spaces: &LatentSpaces, domain_id: usize, xy: &[(usize, usize)]) -> Result<Self> {
        let mut records = Vec::with_capacity(xy.len());
        for &(x, y) in xy {
            if x >= spaces.n_obs {
                return Err(Error::IndexOutOfRange { what: "observation", index: x, bound: spaces.n_obs });
            }
            if y >= spaces.n_classes {
                return Err(Error::IndexOutOfRange { what: "class", index: y, bound: spaces.n_classes });
            }
            records.push(Record { x, y, provenance: None });
        }
        Ok(Self { domain_id, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Draws one latent triple `(c, n, y)` and an observation from `index`'s
/// position in `stream`.
pub(crate) fn draw_record(
    family: &CldFamily,
    domain: &DomainSpec,
    p_cn: &[f64],
    stream: &Stream,
    index: u64,
) -> Record {
    let s = family.spaces();
    let mut rng = stream.at(index);
    let (c, n, y) = match &domain.law {
        LatentLaw::Joint { .. } => {
            let cn = categorical(&mut rng, p_cn);
            let (c, n) = (cn / s.n_noncore, cn % s.n_noncore);
            let y = categorical(&mut rng, family.p_y(c));
            (c, n, y)
        }
        LatentLaw::AntiCausal { p_y, p_c_given_y, p_n_given_c } => {
            let y = categorical(&mut rng, p_y);
            let c = categorical(&mut rng, &p_c_given_y[y * s.n_core..(y + 1) * s.n_core]);
            let n = categorical(&mut rng, &p_n_given_c[c * s.n_noncore..(c + 1) * s.n_noncore]);
            (c, n, y)
        }
    };
    let x = categorical(&mut rng, family.p_x(c, n));
    Record { x, y, provenance: Some(Provenance { core: c, noncore: n }) }
}

/// Samples `n` records along the ancestral chain of `domain`.
pub fn sample_dataset(family: &CldFamily, domain: &DomainSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyRequest("dataset size"));
    }
    let stream = Stream::new(seed).named("dataset");
    let p_cn = domain.p_cn();
    let records = (0..n as u64).map(|i| draw_record(family, domain, &p_cn, &stream, i)).collect();
    Ok(Dataset { domain_id: domain.domain_id, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{canonical_fixture, Fixture};

    fn identity_family() -> CldFamily {
        let s = LatentSpaces::new(2, 3, 6, 2).unwrap();
        let gen: Vec<Vec<Vec<f64>>> = (0..2)
            .map(|c| {
                (0..3)
                    .map(|n| {
                        let mut row = vec![0.0; 6];
                        row[c * 3 + n] = 1.0;
                        row
                    })
                    .collect()
            })
            .collect();
        let lab = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        CldFamily::new(s, &gen, &lab).unwrap()
    }

    #[test]
    fn identity_family_is_deterministic_and_recoverable() {
        let f = identity_family();
        assert!(f.is_deterministic());
        assert!(f.is_core_recoverable());
        assert_eq!(f.core_of_observation()[4], Some(1));
    }

    #[test]
    fn rejects_row_summing_to_point_nine() {
        let s = LatentSpaces::new(1, 1, 2, 2).unwrap();
        let err = CldFamily::new(s, &[vec![vec![0.5, 0.4]]], &[vec![0.5, 0.5]]).unwrap_err();
        assert!(matches!(err, Error::NotStochastic { row: 0, .. }));
    }

    #[test]
    fn rejects_bad_shapes() {
        let s = LatentSpaces::new(1, 1, 2, 2).unwrap();
        let err = CldFamily::new(s, &[vec![vec![1.0]]], &[vec![0.5, 0.5]]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
        assert!(LatentSpaces::new(1, 1, 1, 1).is_err());
    }

    #[test]
    fn uniform_and_anti_causal_domains_validate() {
        let f = identity_family();
        let uni = vec![vec![1.0 / 6.0; 3]; 2];
        let d = DomainSpec::joint(&f, 0, Variant::Cld, &uni).unwrap();
        assert!((d.p_c()[0] - 0.5).abs() < 1e-15);
        let d3 = DomainSpec::anti_causal(
            &f,
            1,
            &[0.5, 0.5],
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[vec![1.0 / 3.0; 3], vec![1.0 / 3.0; 3]],
        )
        .unwrap();
        assert_eq!(d3.variant(), Variant::Cld3);
        assert!(DomainSpec::joint(&f, 2, Variant::Cld3, &uni).is_err());
    }

    #[test]
    fn coherence_detects_shifted_core_marginal() {
        let s = LatentSpaces::new(2, 1, 2, 2).unwrap();
        let gen = vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]];
        let f = CldFamily::new(s, &gen, &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let a = DomainSpec::joint(&f, 0, Variant::Cld2, &[vec![0.5], vec![0.5]]).unwrap();
        let b = DomainSpec::joint(&f, 1, Variant::Cld2, &[vec![0.6], vec![0.4]]).unwrap();
        let same = check_family_coherence(&[a.clone(), a.clone()]).unwrap();
        assert!(same.pass());
        assert_eq!(same.max_deviation(), 0.0);
        let r = check_family_coherence(&[a.clone(), b]).unwrap();
        assert!(!r.pass());
        assert!((r.max_deviation() - 0.1).abs() < 1e-15);
        let c1 = DomainSpec::joint(&f, 2, Variant::Cld1, &[vec![0.6], vec![0.4]]).unwrap();
        assert!(matches!(check_family_coherence(&[a, c1]), Err(Error::MixedVariants { .. })));
    }

    #[test]
    fn single_forced_record() {
        let f = identity_family();
        let mut p = vec![vec![0.0; 3]; 2];
        p[1][2] = 1.0;
        let d = DomainSpec::joint(&f, 0, Variant::Cld, &p).unwrap();
        let ds = sample_dataset(&f, &d, 1, 3).unwrap();
        assert_eq!(ds.records[0], Record { x: 5, y: 1, provenance: Some(Provenance { core: 1, noncore: 2 }) });
        assert!(sample_dataset(&f, &d, 0, 3).is_err());
    }

    #[test]
    fn canon_d_agreement_rate_and_determinism() {
        let fx = canonical_fixture(Fixture::CanonD);
        let ds = sample_dataset(&fx.family, &fx.source, 100_000, 11).unwrap();
        let agree = ds
            .records
            .iter()
            .filter(|r| {
                let p = r.provenance.unwrap();
                p.core == p.noncore
            })
            .count() as f64
            / 1e5;
        assert!((agree - 0.95).abs() < 0.01, "{agree}");
        let again = sample_dataset(&fx.family, &fx.source, 100_000, 11).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn label_given_core_matches_mechanism() {
        // chi-square at 1e-3 significance, 1 degree of freedom per core value
        let fx = canonical_fixture(Fixture::CanonN);
        let ds = sample_dataset(&fx.family, &fx.source, 100_000, 5).unwrap();
        for c in 0..2 {
            let mut counts = [0.0f64; 2];
            for r in &ds.records {
                if r.provenance.unwrap().core == c {
                    counts[r.y] += 1.0;
                }
            }
            let total = counts[0] + counts[1];
            let chi2: f64 = (0..2)
                .map(|y| {
                    let e = total * fx.family.p_y(c)[y];
                    (counts[y] - e) * (counts[y] - e) / e
                })
                .sum();
            assert!(chi2 < 10.828, "chi2 {chi2}");
        }
    }

    #[test]
    fn invariance_classes_merge_noisy_observations() {
        let d = canonical_fixture(Fixture::CanonD).family;
        assert_eq!(d.invariance_classes(), vec![0, 0, 1, 1]);
        let n = canonical_fixture(Fixture::CanonN).family;
        assert_eq!(n.invariance_classes(), vec![0, 0, 0, 0]);
        assert!(!n.is_core_recoverable());
    }
}
