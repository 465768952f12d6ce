use alloc::vec;
use alloc::vec::Vec;

use approx::assert_abs_diff_eq;

use super::*;
use crate::cld::{LatentSpaces, Variant};
use crate::fixtures::{canonical_fixture, random_suite, Fixture, SuiteBounds};

fn h_nats(p: f64) -> f64 {
    -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
}

/// Row over two classes putting `p` on class 1.
fn two(p: f64) -> Vec<f64> {
    vec![1.0 - p, p]
}

fn a_only(p_a1: f64, p_a0: f64) -> PredictorTable {
    PredictorTable::from_fn(4, 2, |x| if x / 2 == 1 { two(p_a1) } else { two(p_a0) }).unwrap()
}

fn b_only() -> PredictorTable {
    PredictorTable::from_fn(4, 2, |x| if x % 2 == 1 { two(1.0) } else { two(0.0) }).unwrap()
}

/// One core value, two non-core values, `x = x^n`.
fn noncore_only_family() -> CldFamily {
    let s = LatentSpaces::new(1, 2, 2, 2).unwrap();
    CldFamily::new(s, &[vec![vec![1.0, 0.0], vec![0.0, 1.0]]], &[vec![0.5, 0.5]]).unwrap()
}

#[test]
fn exact_loss_examples() {
    let fx = canonical_fixture(Fixture::CanonD);
    assert_abs_diff_eq!(
        exact_loss(&fx.family, &fx.source, &PredictorTable::uniform(4, 2)),
        core::f64::consts::LN_2,
        epsilon = 1e-15
    );

    let lifted = a_only(0.75, 0.25);
    let s = exact_loss(&fx.family, &fx.source, &lifted);
    let t = exact_loss(&fx.family, &fx.target, &lifted);
    assert_abs_diff_eq!(s, h_nats(0.75), epsilon = 1e-12);
    assert_abs_diff_eq!(s, t, epsilon = 1e-12);

    // class 0 is reachable everywhere in CANON-D
    let certain = PredictorTable::from_fn(4, 2, |_| two(1.0)).unwrap();
    assert_eq!(exact_loss(&fx.family, &fx.source, &certain), f64::INFINITY);
}

#[test]
fn bayes_predictor_examples() {
    // deterministic invertible family with deterministic labels
    let s = LatentSpaces::new(2, 2, 4, 2).unwrap();
    let gen: Vec<Vec<Vec<f64>>> = (0..2)
        .map(|c| {
            (0..2)
                .map(|n| {
                    let mut r = vec![0.0; 4];
                    r[2 * c + n] = 1.0;
                    r
                })
                .collect()
        })
        .collect();
    let family = CldFamily::new(s, &gen, &[two(0.0), two(1.0)]).unwrap();
    let domain = DomainSpec::joint(&family, 0, Variant::Cld, &[vec![0.25, 0.25], vec![0.25, 0.25]]).unwrap();
    let bayes = bayes_predictor(&family, &domain);
    for x in 0..4 {
        assert_eq!(bayes.table.row(x), family.p_y(x / 2));
    }
    assert!(bayes.unreachable.iter().all(|u| !u));

    let n = canonical_fixture(Fixture::CanonN);
    let b = bayes_predictor(&n.family, &n.source).table;
    assert!(b.row(3)[1] > b.row(2)[1], "B carries information about the core in CANON-N");

    let d = canonical_fixture(Fixture::CanonD);
    for dom in [&d.source, &d.target] {
        let b = bayes_predictor(&d.family, dom).table;
        assert_abs_diff_eq!(b.row(0)[1], b.row(1)[1], epsilon = 1e-15);
        assert_abs_diff_eq!(b.row(2)[1], b.row(3)[1], epsilon = 1e-15);
        assert_abs_diff_eq!(b.row(2)[1], 0.75, epsilon = 1e-15);
    }
}

#[test]
fn unreachable_rows_are_uniform_and_flagged() {
    let fx = canonical_fixture(Fixture::CanonD);
    let point = DomainSpec::joint(&fx.family, 7, Variant::Cld, &[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
    let b = bayes_predictor(&fx.family, &point);
    assert_eq!(b.unreachable, vec![false, true, true, true]);
    assert_eq!(b.table.row(3), &[0.5, 0.5]);
}

#[test]
fn causal_faithful_optimum() {
    let d = canonical_fixture(Fixture::CanonD);
    let opt = optimal_causal_faithful(&d.family, &d.source);
    assert!(!opt.degenerate);
    for x in 0..4 {
        let expect = if x / 2 == 1 { [0.25, 0.75] } else { [0.75, 0.25] };
        assert_eq!(opt.table.row(x), &expect);
    }
    assert_abs_diff_eq!(
        exact_loss(&d.family, &d.source, &opt.table),
        exact_loss(&d.family, &d.source, &bayes_predictor(&d.family, &d.source).table),
        epsilon = 1e-12
    );

    let n = canonical_fixture(Fixture::CanonN);
    let opt = optimal_causal_faithful(&n.family, &n.source);
    assert!(opt.degenerate);
    let marginal = label_marginal(&n.family, &n.source);
    for x in 0..4 {
        assert_eq!(opt.table.row(x), marginal.as_slice());
    }
    // best among constants: scan the 2-class simplex
    let l_opt = exact_loss(&n.family, &n.source, &opt.table);
    for i in 1..100 {
        let q = PredictorTable::from_fn(4, 2, |_| two(i as f64 / 100.0)).unwrap();
        assert!(l_opt <= exact_loss(&n.family, &n.source, &q) + 1e-15);
    }
}

#[test]
fn fuse_examples() {
    let d = canonical_fixture(Fixture::CanonD);
    let q = PredictorTable::random(&Stream::new(1), 0, 4, 2);
    let f = fuse(&d.family, &q);
    for c in 0..2 {
        for n in 0..2 {
            assert_eq!(f.row(c, n), q.row(2 * c + n));
        }
    }
    let u = fuse(&d.family, &PredictorTable::uniform(4, 2));
    assert!((0..2).all(|c| (0..2).all(|n| u.row(c, n) == [0.5, 0.5])));

    let n = canonical_fixture(Fixture::CanonN);
    let f = fuse(&n.family, &a_only(0.9, 0.2));
    // x^c = 1: A = 1 with 0.75, A = 0 with 0.25
    assert_abs_diff_eq!(f.row(1, 0)[1], 0.75 * 0.9 + 0.25 * 0.2, epsilon = 1e-15);
    assert_abs_diff_eq!(f.row(0, 1)[1], 0.25 * 0.9 + 0.75 * 0.2, epsilon = 1e-15);
}

#[test]
fn causal_invariance_examples() {
    let d = canonical_fixture(Fixture::CanonD);
    let constant = PredictorTable::from_fn(4, 2, |_| two(0.3)).unwrap();
    let c = is_causal_invariant(&d.family, &constant, 1e-12);
    assert!(c.invariant);
    assert_eq!(c.max_deviation, 0.0);
    assert!(is_causal_invariant(&d.family, &a_only(0.6, 0.1), 1e-12).invariant);

    let b = is_causal_invariant(&d.family, &b_only(), 1e-12);
    assert!(!b.invariant);
    assert_eq!(b.witness, Some(InvarianceWitness { core: 0, noncore: 0, noncore_tilde: 1 }));

    // in CANON-N every x-dependent table breaks invariance
    let n = canonical_fixture(Fixture::CanonN);
    assert!(!is_causal_invariant(&n.family, &a_only(0.6, 0.1), 1e-9).invariant);
    for i in 0..50 {
        let q = PredictorTable::random(&Stream::new(4), i, 4, 2);
        assert!(!is_causal_invariant(&n.family, &q, 1e-9).invariant);
    }
    assert!(is_causal_invariant(&n.family, &constant, 1e-12).invariant);
}

#[test]
fn ci_index_examples() {
    let d = canonical_fixture(Fixture::CanonD);
    assert_eq!(exact_ci_index(&d.family, &d.source, &a_only(0.8, 0.3)), 1.0);

    let f = noncore_only_family();
    let dom = DomainSpec::joint(&f, 0, Variant::Cld, &[vec![0.5, 0.5]]).unwrap();
    let disjoint = PredictorTable::new(&[two(0.0), two(1.0)]).unwrap();
    assert_abs_diff_eq!(exact_ci_index(&f, &dom, &disjoint), 0.5, epsilon = 1e-15);

    let b = exact_ci_index(&d.family, &d.source, &b_only());
    assert!(b < 1.0);
    // source P(x^n) is uniform: half the resampled pairs flip B
    assert_abs_diff_eq!(b, 0.5, epsilon = 1e-15);
}

#[test]
fn invariant_tables_have_unit_ci_index() {
    for seed in 0..20 {
        let suite = random_suite(seed, SuiteBounds::default());
        let classes = suite.family.invariance_classes();
        let m = classes.iter().max().unwrap() + 1;
        let k = suite.family.spaces().n_classes;
        let rows = PredictorTable::random(&Stream::new(seed), 0, m, k);
        let q = PredictorTable::from_fn(classes.len(), k, |x| rows.row(classes[x]).to_vec()).unwrap();
        for dom in &suite.domains {
            assert_eq!(exact_ci_index(&suite.family, dom, &q), 1.0);
        }
    }
}

#[test]
fn support_condition_examples() {
    let d = canonical_fixture(Fixture::CanonD);
    assert_eq!(support_condition(&d.source, &d.source), SupportCondition { cond3: true, cond3prime: true });
    assert!(support_condition(&d.source, &d.target).cond3prime);

    let src = DomainSpec::joint(&d.family, 0, Variant::Cld, &[vec![0.5, 0.5], vec![0.0, 0.0]]).unwrap();
    let tgt = DomainSpec::joint(&d.family, 1, Variant::Cld, &[vec![0.45, 0.45], vec![0.1, 0.0]]).unwrap();
    let s = support_condition(&src, &tgt);
    assert!(!s.cond3 && !s.cond3prime);

    let partial = DomainSpec::joint(&d.family, 2, Variant::Cld, &[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
    let s = support_condition(&partial, &src);
    assert!(s.cond3 && !s.cond3prime);
}

fn bayes_beats_random_tables(family: &CldFamily, domain: &DomainSpec, seed: u64) {
    let k = family.spaces().n_classes;
    let n = family.spaces().n_obs;
    let bayes = bayes_predictor(family, domain);
    let l_bayes = exact_loss(family, domain, &bayes.table);
    let reachable = family.reachable_observations();
    let stream = Stream::new(seed).named("random-tables");
    for i in 0..1000 {
        let q = PredictorTable::random(&stream, i, n, k);
        let l = exact_loss(family, domain, &q);
        let matches = domain
            .p_xy(family)
            .chunks(k)
            .enumerate()
            .all(|(x, row)| row.iter().sum::<f64>() == 0.0 || !reachable[x] || q.row(x) == bayes.table.row(x));
        if matches {
            assert!(l_bayes <= l + 1e-12);
        } else {
            assert!(l_bayes < l, "table {i}: {l} vs Bayes {l_bayes}");
        }
    }
}

#[test]
fn bayes_is_minimal_among_random_tables() {
    for f in [Fixture::CanonD, Fixture::CanonN, Fixture::CanonL] {
        let fx = canonical_fixture(f);
        bayes_beats_random_tables(&fx.family, &fx.source, 1);
        bayes_beats_random_tables(&fx.family, &fx.target, 2);
    }
    for seed in 0..10 {
        let s = random_suite(seed, SuiteBounds::default());
        bayes_beats_random_tables(&s.family, &s.domains[0], seed);
    }
}

#[test]
fn loss_is_invariant_to_relabelling() {
    let fx = canonical_fixture(Fixture::CanonN);
    let q = PredictorTable::random(&Stream::new(8), 0, 4, 2);
    let gen: Vec<Vec<Vec<f64>>> = (0..2).map(|c| (0..2).map(|n| fx.family.p_x(c, n).to_vec()).collect()).collect();
    let swapped_labels: Vec<Vec<f64>> = (0..2).map(|c| fx.family.p_y(c).iter().rev().copied().collect()).collect();
    let family = CldFamily::new(*fx.family.spaces(), &gen, &swapped_labels).unwrap();
    let swapped_q = PredictorTable::from_fn(4, 2, |x| q.row(x).iter().rev().copied().collect()).unwrap();
    assert_abs_diff_eq!(
        exact_loss(&fx.family, &fx.source, &q),
        exact_loss(&family, &fx.source, &swapped_q),
        epsilon = 1e-14
    );
}

#[test]
fn gibbs_grid_search() {
    // E_{y ~ p}[−log q(y)] over a 0.01 simplex grid is minimised at q = p
    for p in [vec![0.75, 0.25], vec![0.2, 0.3, 0.5], vec![0.1, 0.1, 0.8]] {
        let ce = |q: &[f64]| -> f64 { p.iter().zip(q).map(|(a, b)| if *a > 0.0 { -a * b.ln() } else { 0.0 }).sum() };
        let at_p = ce(&p);
        let mut best = (f64::INFINITY, Vec::new());
        let steps = 100;
        let mut visit = |q: Vec<f64>| {
            let v = ce(&q);
            if v < best.0 {
                best = (v, q);
            }
        };
        if p.len() == 2 {
            for i in 1..steps {
                visit(vec![i as f64 / 100.0, (steps - i) as f64 / 100.0]);
            }
        } else {
            for i in 1..steps {
                for j in 1..steps - i {
                    visit(vec![i as f64 / 100.0, j as f64 / 100.0, (steps - i - j) as f64 / 100.0]);
                }
            }
        }
        assert!(at_p <= best.0 + 1e-15);
        for (a, b) in best.1.iter().zip(&p) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }
}

fn assert_applicable_pass(report: &TheoremReport) {
    assert_eq!(report.claims.len(), CLAIMS.len());
    for (c, id) in report.claims.iter().zip(CLAIMS) {
        assert_eq!(c.id, id);
        assert_ne!(c.status, ClaimStatus::Fail, "{:?} failed: deviation {}", c.id, c.deviation);
        let bound = match c.id {
            ClaimId::P5 => 1e-5,
            ClaimId::P8 => 1e-6,
            _ => 1e-9,
        };
        assert!(c.deviation < bound, "{:?}: {}", c.id, c.deviation);
    }
}

#[test]
fn canonical_theorem_reports() {
    let d = canonical_fixture(Fixture::CanonD);
    let r = verify_theorems(&d.family, &[d.source.clone(), d.target.clone()], 1e-9);
    assert_applicable_pass(&r);
    for id in [
        ClaimId::P1,
        ClaimId::P2,
        ClaimId::T1,
        ClaimId::T2,
        ClaimId::T3,
        ClaimId::P4,
        ClaimId::P5,
        ClaimId::P6,
        ClaimId::P8,
        ClaimId::T5,
    ] {
        assert_eq!(r.get(id).status, ClaimStatus::Pass, "{id:?}");
    }
    assert_eq!(r.get(ClaimId::P7).status, ClaimStatus::NotApplicable);

    let n = canonical_fixture(Fixture::CanonN);
    let r = verify_theorems(&n.family, &[n.source.clone(), n.target.clone()], 1e-9);
    assert_applicable_pass(&r);
    assert_eq!(r.get(ClaimId::T2).status, ClaimStatus::Pass);
    assert_eq!(r.get(ClaimId::T3).status, ClaimStatus::Pass);
    assert_eq!(r.get(ClaimId::P8).status, ClaimStatus::NotApplicable);

    let l = canonical_fixture(Fixture::CanonL);
    let r = verify_theorems(&l.family, &[l.source.clone(), l.target.clone()], 1e-9);
    assert_applicable_pass(&r);
    assert_eq!(r.get(ClaimId::P7).status, ClaimStatus::Pass);
}

#[test]
fn random_suites_pass_every_applicable_claim() {
    let mut ran = [0usize; 11];
    for seed in 0..100 {
        let s = random_suite(seed, SuiteBounds::default());
        let r = verify_theorems(&s.family, &s.domains, 1e-9);
        assert_applicable_pass(&r);
        for (i, c) in r.claims.iter().enumerate() {
            if c.status == ClaimStatus::Pass {
                ran[i] += 1;
            }
        }
    }
    // every claim is exercised by some suite
    assert!(ran.iter().all(|&n| n > 0), "{ran:?}");
}

#[test]
fn broken_coherence_fails_risk_invariance() {
    let d = canonical_fixture(Fixture::CanonD);
    let a = DomainSpec::joint(&d.family, 0, Variant::Cld2, &[vec![0.45, 0.05], vec![0.05, 0.45]]).unwrap();
    let b = DomainSpec::joint(&d.family, 1, Variant::Cld2, &[vec![0.5, 0.1], vec![0.1, 0.3]]).unwrap();
    let r = verify_theorems(&d.family, &[a, b], 1e-9);
    let p4 = r.get(ClaimId::P4);
    assert_eq!(p4.status, ClaimStatus::Fail);
    assert!(p4.witness.is_some());
    assert!(r.any_fail());
}
