use alloc::vec;
use alloc::vec::Vec;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use super::*;
use crate::diffkit::{Activation, Embedding, Matrix};
use crate::fixtures::{canonical_fixture, coordinates, random_suite, Fixture, SuiteBounds};
use crate::oracle::{bayes_predictor, exact_ci_index};

fn table_model(rows: Vec<Vec<f64>>, head: &[Vec<f64>]) -> Model {
    let mut rng = Stream::new(0).at(0);
    let mut m = Model::new(Embedding::Table { rows }, &[], head[0].len(), Activation::Relu, &mut rng);
    m.head = Matrix::from_rows(head);
    m
}

fn random_model(seed: u64, n_obs: usize, k: usize) -> Model {
    let mut rng = Stream::new(seed).named("model").at(0);
    let mut m = Model::new(Embedding::OneHot { n_obs }, &[4], k, Activation::Tanh, &mut rng);
    let flat: Vec<f64> = m.flat().iter().map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0)).collect();
    m.set_flat(&flat);
    m
}

fn a_only() -> Model {
    table_model(coordinates(), &[vec![0.0, 1.7], vec![0.0, 0.0], vec![0.0, -0.4]])
}

#[test]
fn jsd_examples() {
    assert_eq!(jsd_base2(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
    assert_eq!(jsd_base2(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
    // m = (3/4, 1/4): ½·(½ log₂(2/3) + ½ log₂ 2) + ½·log₂(4/3)
    let direct = 0.5 * (0.5 * (0.5f64 / 0.75).log2() + 0.5 * (0.5f64 / 0.25).log2()) + 0.5 * (1.0f64 / 0.75).log2();
    let v = jsd_base2(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
    assert_abs_diff_eq!(v, direct, epsilon = 1e-15);
    assert_abs_diff_eq!(v, 0.3113, epsilon = 5e-5);
}

#[test]
fn jsd_rejects_invalid_input() {
    assert!(jsd_base2(&[0.5, 0.5], &[1.0]).is_err());
    assert!(jsd_base2(&[0.5, 0.6], &[0.5, 0.5]).is_err());
    assert!(jsd_base2(&[1.2, -0.2], &[0.5, 0.5]).is_err());
}

fn simplex() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 3).prop_filter("nonzero", |v| v.iter().sum::<f64>() > 1e-3).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn jsd_is_symmetric_and_bounded(p in simplex(), q in simplex()) {
        let a = jsd_base2(&p, &q).unwrap();
        let b = jsd_base2(&q, &p).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
        prop_assert!((0.0..=1.0).contains(&a));
    }
}

#[test]
fn ci_mc_examples() {
    let fx = canonical_fixture(Fixture::CanonD);
    let constant = table_model(coordinates(), &[vec![0.0, 0.0], vec![0.0, 0.0], vec![0.3, -0.1]]);
    let e = ci_index_mc(&constant, &fx.family, &fx.source, 500, 1, PairStyle::Marginal, 1).unwrap();
    assert_eq!((e.value, e.stderr, e.n_pairs), (1.0, 0.0, 500));

    for style in [PairStyle::Marginal, PairStyle::Uniform] {
        let e = ci_index_mc(&a_only(), &fx.family, &fx.target, 500, 1, style, 2).unwrap();
        assert_eq!((e.value, e.stderr), (1.0, 0.0));
    }
    assert!(ci_index_mc(&constant, &fx.family, &fx.source, 0, 1, PairStyle::Marginal, 1).is_err());
    assert!(ci_index_mc(&constant, &fx.family, &fx.source, 5, 0, PairStyle::Marginal, 1).is_err());
}

#[test]
fn ci_mc_covers_exact_value() {
    // deterministic fixture: one draw per fused row is exact
    let fx = canonical_fixture(Fixture::CanonD);
    let mut misses = 0;
    for seed in 0..50 {
        let m = random_model(seed, 4, 2);
        let exact = exact_ci_index(&fx.family, &fx.source, &m.predictor_table().unwrap());
        let e = ci_index_mc(&m, &fx.family, &fx.source, 2000, 1, PairStyle::Marginal, 100 + seed).unwrap();
        assert!(e.stderr >= 0.0 && (0.0..=1.0).contains(&e.value));
        if (e.value - exact).abs() > 3.0 * e.stderr + 1e-12 {
            misses += 1;
        }
    }
    assert_eq!(misses, 0);
}

#[test]
fn ci_mc_converges_on_every_fixture() {
    for f in [Fixture::CanonD, Fixture::CanonN, Fixture::CanonL] {
        let fx = canonical_fixture(f);
        let reps = if fx.family.is_deterministic() { 1 } else { 64 };
        let m = random_model(7, 4, 2);
        let table = m.predictor_table().unwrap();
        let exact = exact_ci_index(&fx.family, &fx.source, &table);
        for seed in 0..20 {
            let e =
                ci_index_mc_table(&table, &fx.family, &fx.source, 100_000, reps, PairStyle::Marginal, seed).unwrap();
            assert!((e.value - exact).abs() < 0.01, "{}: {} vs {exact}", f.name(), e.value);
        }
    }
}

#[test]
fn evaluate_exact_is_the_tabulated_oracle_loss() {
    for seed in 0..10 {
        let s = random_suite(seed, SuiteBounds::default());
        let sp = s.family.spaces();
        let m = random_model(seed, sp.n_obs, sp.n_classes);
        let r = evaluate_exact(&m, &s.family, &s.domains[0]).unwrap();
        let t = m.predictor_table().unwrap();
        assert_eq!(r.loss.to_bits(), exact_loss(&s.family, &s.domains[0], &t).to_bits());
        assert_eq!(r.accuracy.to_bits(), exact_accuracy(&s.family, &s.domains[0], &t).to_bits());
        assert_eq!(r.n, None);
    }
}

#[test]
fn bayes_beats_random_models() {
    let fx = canonical_fixture(Fixture::CanonN);
    let bayes = exact_loss(&fx.family, &fx.source, &bayes_predictor(&fx.family, &fx.source).table);
    for seed in 0..1000 {
        let m = random_model(seed, 4, 2);
        assert!(bayes < evaluate_exact(&m, &fx.family, &fx.source).unwrap().loss);
    }
}

#[test]
fn sampled_evaluation_coverage() {
    let fx = canonical_fixture(Fixture::CanonN);
    let m = random_model(3, 4, 2);
    let exact = evaluate_exact(&m, &fx.family, &fx.target).unwrap();
    let n = 2000;
    for trial in 0..100 {
        let r = evaluate(&m, &fx.family, &fx.target, n, trial).unwrap();
        assert_eq!(r.n, Some(n));
        assert!((r.loss - exact.loss).abs() < 5.0 / (n as f64).sqrt(), "trial {trial}");
    }
}

#[test]
fn accuracy_examples() {
    let fx = canonical_fixture(Fixture::CanonD);
    let data = Dataset::observed(fx.family.spaces(), 0, &[(0, 0), (1, 0), (2, 1), (3, 1), (2, 1)]).unwrap();
    let correct = PredictorTable::from_fn(4, 2, |x| if x / 2 == 1 { vec![0.1, 0.9] } else { vec![0.8, 0.2] }).unwrap();
    let r = evaluate_table_on(&correct, &data).unwrap();
    assert_eq!(r.accuracy, 1.0);
    assert_eq!(r.n, Some(5));
    // ties go to class 0
    let r = evaluate_table_on(&PredictorTable::uniform(4, 2), &data).unwrap();
    assert_abs_diff_eq!(r.accuracy, 0.4, epsilon = 1e-15);
    assert_abs_diff_eq!(r.loss, core::f64::consts::LN_2, epsilon = 1e-15);
}

#[test]
fn identical_datasets_have_zero_divergence() {
    let fx = canonical_fixture(Fixture::CanonN);
    let data = sample_dataset(&fx.family, &fx.source, 200, 4).unwrap();
    let mut copy = data.clone();
    copy.domain_id = 1;
    let m = random_model(5, 4, 2);
    let d = feature_divergences(&m, &[data, copy], true).unwrap();
    assert_eq!(d.marginal, Divergence { mmd: 0.0, coral: 0.0 });
    for c in &d.per_class {
        assert_eq!(c.unwrap(), Divergence { mmd: 0.0, coral: 0.0 });
    }
    assert_eq!(d.prior_normalized.unwrap(), Divergence { mmd: 0.0, coral: 0.0 });
}

#[test]
fn divergences_need_two_domains() {
    let fx = canonical_fixture(Fixture::CanonN);
    let data = sample_dataset(&fx.family, &fx.source, 20, 4).unwrap();
    assert!(feature_divergences(&random_model(0, 4, 2), core::slice::from_ref(&data), false).is_err());
    let single = Dataset::observed(fx.family.spaces(), 1, &[(0, 0)]).unwrap();
    assert!(matches!(
        feature_divergences(&random_model(0, 4, 2), &[data, single], false),
        Err(Error::TooFewExamples { .. })
    ));
}

#[test]
fn causal_features_align_class_conditionals_under_label_shift() {
    // A-only features on the anti-causal fixture: P(H | Y) is shared, P(H) is not
    let fx = canonical_fixture(Fixture::CanonL);
    let rows: Vec<Vec<f64>> = coordinates().iter().map(|r| vec![r[0]]).collect();
    let m = table_model(rows, &[vec![0.0, 1.0], vec![0.0, 0.0]]);
    let datasets = vec![
        sample_dataset(&fx.family, &fx.source, 4000, 11).unwrap(),
        sample_dataset(&fx.family, &fx.target, 4000, 12).unwrap(),
    ];
    let d = feature_divergences(&m, &datasets, true).unwrap();
    assert!(d.marginal.mmd > 0.1 && d.marginal.coral > 0.1, "{:?}", d.marginal);
    for c in &d.per_class {
        let c = c.unwrap();
        assert!(c.mmd < 0.01 && c.coral < 0.01, "{c:?}");
        assert!(c.mmd < d.marginal.mmd / 10.0);
    }
    let balanced = d.prior_normalized.unwrap();
    assert!(balanced.mmd < 0.01 && balanced.coral < 0.01, "{balanced:?}");
}
