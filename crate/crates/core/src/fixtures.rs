//! Canonical spurious-correlation fixtures and random family generators.
//!
//! The canonical fixtures have two binary latent factors and observe them as
//! two binary coordinates `(A, B)`, encoded as observation index `2A + B`.
//! `A` carries the core factor, `B` the non-core factor.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use rand::Rng;
use rand_distr::Exp1;

use crate::cld::{CldFamily, DomainSpec, LatentSpaces, Variant, INTERNAL_TOLERANCE};
use crate::error::{Error, Result};
use crate::rng::Stream;

/// Probability that the label equals the core factor.
pub const LABEL_AGREEMENT: f64 = 0.75;
/// Probability that the non-core factor copies the core factor in the source.
pub const SOURCE_AGREEMENT: f64 = 0.95;
/// Same, in the target.
pub const TARGET_AGREEMENT: f64 = 0.05;
/// Probability that `A` is flipped away from the core factor in CANON-N.
pub const GENERATION_NOISE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Fixture {
    /// Deterministic generation `A = x^c`, `B = x^n`.
    CanonD,
    /// As CANON-D, with `A` flipped with probability 0.25.
    CanonN,
    /// Anti-causal label-shift pair over the CANON-D generation channel.
    CanonL,
}

impl Fixture {
    pub fn name(&self) -> &'static str {
        match self {
            Fixture::CanonD => "CANON-D",
            Fixture::CanonN => "CANON-N",
            Fixture::CanonL => "CANON-L",
        }
    }
}

impl FromStr for Fixture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "CANON-D" => Ok(Fixture::CanonD),
            "CANON-N" => Ok(Fixture::CanonN),
            "CANON-L" => Ok(Fixture::CanonL),
            other => Err(Error::UnknownFixture(other.to_string())),
        }
    }
}

/// A family with its source and target domains.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSet {
    pub family: CldFamily,
    pub source: DomainSpec,
    pub target: DomainSpec,
}

/// `(A, B)` coordinates of the four canonical observations.
pub fn coordinates() -> Vec<Vec<f64>> {
    (0..4).map(|x| vec![(x / 2) as f64, (x % 2) as f64]).collect()
}

fn binary_family(noise: f64, label_agreement: f64) -> CldFamily {
    let spaces = LatentSpaces { n_core: 2, n_noncore: 2, n_obs: 4, n_classes: 2 };
    let mut gen = vec![0.0; 16];
    for c in 0..2 {
        for n in 0..2 {
            let row = &mut gen[(c * 2 + n) * 4..(c * 2 + n + 1) * 4];
            row[2 * c + n] += 1.0 - noise;
            row[2 * (1 - c) + n] += noise;
        }
    }
    let lab = vec![label_agreement, 1.0 - label_agreement, 1.0 - label_agreement, label_agreement];
    CldFamily::from_flat(spaces, gen, lab, INTERNAL_TOLERANCE).expect("canonical family is stochastic")
}

/// A CLD2 domain of the binary fixtures with uniform `X^c` and
/// `P(X^n = X^c) = agreement`.
pub fn agreement_domain(family: &CldFamily, domain_id: usize, agreement: f64) -> Result<DomainSpec> {
    if !(0.0..=1.0).contains(&agreement) || family.spaces().n_core != 2 || family.spaces().n_noncore != 2 {
        return Err(Error::InvalidParameter { name: "agreement", reason: "needs a binary family and a probability" });
    }
    let a = 0.5 * agreement;
    let d = 0.5 * (1.0 - agreement);
    DomainSpec::joint_flat(family.spaces(), domain_id, Variant::Cld2, vec![a, d, d, a], INTERNAL_TOLERANCE)
}

pub fn canonical_fixture(which: Fixture) -> FixtureSet {
    match which {
        Fixture::CanonD | Fixture::CanonN => {
            let noise = if which == Fixture::CanonD { 0.0 } else { GENERATION_NOISE };
            let family = binary_family(noise, LABEL_AGREEMENT);
            let source = agreement_domain(&family, 0, SOURCE_AGREEMENT).expect("valid agreement");
            let target = agreement_domain(&family, 1, TARGET_AGREEMENT).expect("valid agreement");
            FixtureSet { family, source, target }
        }
        Fixture::CanonL => {
            let family = binary_family(0.0, 0.9);
            let s = *family.spaces();
            let c_given_y = vec![0.9, 0.1, 0.1, 0.9];
            let n_given_c = vec![0.7, 0.3, 0.3, 0.7];
            let source = DomainSpec::anti_causal_flat(
                &s,
                0,
                vec![0.8, 0.2],
                c_given_y.clone(),
                n_given_c.clone(),
                INTERNAL_TOLERANCE,
            )
            .expect("valid CLD3 domain");
            let target = DomainSpec::anti_causal_flat(&s, 1, vec![0.2, 0.8], c_given_y, n_given_c, INTERNAL_TOLERANCE)
                .expect("valid CLD3 domain");
            FixtureSet { family, source, target }
        }
    }
}

/// Looks a fixture up by name.
pub fn fixture_by_name(name: &str) -> Result<FixtureSet> {
    Ok(canonical_fixture(name.parse()?))
}

/// Bounds for [`random_suite`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteBounds {
    pub max_core: usize,
    pub max_noncore: usize,
    pub max_obs: usize,
    pub max_classes: usize,
}

impl Default for SuiteBounds {
    fn default() -> Self {
        Self { max_core: 4, max_noncore: 4, max_obs: 16, max_classes: 3 }
    }
}

/// A random family with two coherent CLD2 domains followed by two coherent
/// CLD3 domains.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomSuite {
    pub family: CldFamily,
    pub domains: Vec<DomainSpec>,
}

fn simplex<R: Rng>(rng: &mut R, k: usize, floor: f64, zero_prob: f64) -> Vec<f64> {
    loop {
        let mut w: Vec<f64> = (0..k)
            .map(|_| {
                if zero_prob > 0.0 && rng.random::<f64>() < zero_prob {
                    0.0
                } else {
                    let e: f64 = rng.sample(Exp1);
                    e + floor
                }
            })
            .collect();
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            w.iter_mut().for_each(|v| *v /= total);
            return w;
        }
    }
}

fn range<R: Rng>(rng: &mut R, lo: usize, hi: usize) -> usize {
    lo + (rng.random::<u64>() % (hi - lo + 1) as u64) as usize
}

/// Draws a deterministic family: every latent pair maps to one observation.
/// Observations may collide across core values, so some suites exercise the
/// non-recoverable branches of the oracle.
pub fn random_suite(seed: u64, bounds: SuiteBounds) -> RandomSuite {
    let mut rng = Stream::new(seed).named("random-suite").at(0);
    let n_core = range(&mut rng, 2, bounds.max_core);
    let n_noncore = range(&mut rng, 2, bounds.max_noncore);
    let n_obs = range(&mut rng, n_core.max(2), bounds.max_obs);
    let n_classes = range(&mut rng, 2, bounds.max_classes);
    let spaces = LatentSpaces::new(n_core, n_noncore, n_obs, n_classes).expect("bounded sizes");

    let mut gen = vec![0.0; n_core * n_noncore * n_obs];
    for cn in 0..n_core * n_noncore {
        let x = range(&mut rng, 0, n_obs - 1);
        gen[cn * n_obs + x] = 1.0;
    }
    let mut lab = Vec::with_capacity(n_core * n_classes);
    for _ in 0..n_core {
        lab.extend(simplex(&mut rng, n_classes, 0.1, 0.0));
    }
    let family = CldFamily::from_flat(spaces, gen, lab, INTERNAL_TOLERANCE).expect("normalised");

    let p_c = simplex(&mut rng, n_core, 0.05, 0.0);
    let mut domains = Vec::with_capacity(4);
    for id in 0..2 {
        let mut p_cn = Vec::with_capacity(n_core * n_noncore);
        for &pc in &p_c {
            let cond = simplex(&mut rng, n_noncore, 0.0, 0.2);
            p_cn.extend(cond.iter().map(|p| p * pc));
        }
        // renormalise away rounding from the product
        let total: f64 = p_cn.iter().sum();
        p_cn.iter_mut().for_each(|p| *p /= total);
        domains.push(DomainSpec::joint_flat(&spaces, id, Variant::Cld2, p_cn, INTERNAL_TOLERANCE).expect("normalised"));
    }

    let mut c_given_y = Vec::with_capacity(n_classes * n_core);
    for _ in 0..n_classes {
        c_given_y.extend(simplex(&mut rng, n_core, 0.05, 0.0));
    }
    for id in 2..4 {
        let p_y = simplex(&mut rng, n_classes, 0.05, 0.0);
        let mut n_given_c = Vec::with_capacity(n_core * n_noncore);
        for _ in 0..n_core {
            n_given_c.extend(simplex(&mut rng, n_noncore, 0.0, 0.2));
        }
        domains.push(
            DomainSpec::anti_causal_flat(&spaces, id, p_y, c_given_y.clone(), n_given_c, INTERNAL_TOLERANCE)
                .expect("normalised"),
        );
    }
    RandomSuite { family, domains }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cld::check_family_coherence;

    #[test]
    fn canonical_fixtures_are_coherent_cld2_pairs() {
        for f in [Fixture::CanonD, Fixture::CanonN] {
            let fx = canonical_fixture(f);
            let r = check_family_coherence(&[fx.source.clone(), fx.target.clone()]).unwrap();
            assert!(r.pass(), "{}", f.name());
            assert_eq!(r.variant, Variant::Cld2);
        }
        let l = canonical_fixture(Fixture::CanonL);
        assert!(check_family_coherence(&[l.source, l.target]).unwrap().pass());
    }

    #[test]
    fn canon_d_is_deterministic_canon_n_is_not() {
        assert!(canonical_fixture(Fixture::CanonD).family.is_deterministic());
        assert!(!canonical_fixture(Fixture::CanonN).family.is_deterministic());
        let fx = canonical_fixture(Fixture::CanonD);
        for (got, want) in fx.source.p_cn().iter().zip([0.475, 0.025, 0.025, 0.475]) {
            assert!((got - want).abs() < 1e-15);
        }
        for (got, want) in fx.target.p_cn().iter().zip([0.025, 0.475, 0.475, 0.025]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn unknown_fixture_name() {
        assert!(matches!(fixture_by_name("CANON-X"), Err(Error::UnknownFixture(_))));
        assert_eq!(fixture_by_name("CANON-N").unwrap(), canonical_fixture(Fixture::CanonN));
    }

    #[test]
    fn random_suites_are_coherent_and_bounded() {
        for seed in 0..50 {
            let s = random_suite(seed, SuiteBounds::default());
            let sp = s.family.spaces();
            assert!(sp.n_core <= 4 && sp.n_noncore <= 4 && sp.n_obs <= 16 && sp.n_classes <= 3);
            assert!(s.family.is_deterministic());
            assert!(check_family_coherence(&s.domains[..2]).unwrap().max_deviation() < 1e-12);
            assert!(check_family_coherence(&s.domains[2..]).unwrap().pass());
        }
    }
}
