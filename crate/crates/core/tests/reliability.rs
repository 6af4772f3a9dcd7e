use proptest::prelude::*;

use evorl::reliability::*;
use evorl::Error;

#[test]
fn gap_and_spread_at_the_worked_point() {
    let m = SkillEvalModel::bernoulli_uniform(0.8, 0.5, 4).unwrap();
    let (d, s) = gap_and_sigma(&m);
    assert!((d - 0.3).abs() < 1e-12);
    assert!((s * s - 0.1025).abs() < 1e-12);
    assert!((s - 0.3201562).abs() < 1e-7);
    assert!((ranking_probability(d, s) - 0.8256).abs() < 1e-4);
    assert!((ranking_bound(0.3, 4, 0.0, 1.0).unwrap() - 0.8019).abs() < 1e-4);
}

#[test]
fn symmetric_and_degenerate_cases() {
    assert_eq!(ranking_probability(0.0, 0.4), 0.5);
    assert!(ranking_probability(-0.1, 0.4) < 0.5);
    for k in [1, 2, 8] {
        assert_eq!(ranking_bound(0.0, k, 0.0, 1.0).unwrap(), 0.5);
    }
    let same = SkillEvalModel::bernoulli_uniform(0.6, 0.6, 3).unwrap();
    assert_eq!(gap_and_sigma(&same).0, 0.0);
    let sure = SkillEvalModel::bernoulli_uniform(1.0, 0.0, 3).unwrap();
    assert_eq!(gap_and_sigma(&sure).1, 0.0);
    assert!(matches!(ranking_bound(0.1, 4, 1.0, 0.5), Err(Error::Input(_))));
    assert!(SkillEvalModel::bernoulli(&[0.5], &[0.5, 0.2]).is_err());
}

#[test]
fn monte_carlo_edge_cases() {
    let sure = SkillEvalModel::bernoulli_uniform(1.0, 0.0, 4).unwrap();
    assert_eq!(monte_carlo_rank(&sure, RewardLaw::Bernoulli, 5_000, 1).unwrap().probability, 1.0);
    let same = SkillEvalModel::bernoulli_uniform(0.4, 0.4, 4).unwrap();
    let est = monte_carlo_rank(&same, RewardLaw::Bernoulli, 200_000, 2).unwrap();
    assert!((est.probability - 0.5).abs() <= 4.0 * est.std_error);
    assert_eq!(est, monte_carlo_rank(&same, RewardLaw::Bernoulli, 200_000, 2).unwrap());
}

#[test]
fn table_rows_and_file_form() {
    let rows = reliability_table(&[(0.8, 0.5), (0.5, 0.5), (1.0, 0.0)], &[4], 20_000, 3).unwrap();
    assert_eq!(rows.len(), 3);
    assert!((rows[0].normal_approx - 0.8256).abs() < 1e-4);
    assert!((rows[0].bound - 0.8019).abs() < 1e-4);
    assert_eq!(rows[1].normal_approx, 0.5);
    assert_eq!(rows[2].monte_carlo, 1.0);
    let tsv = table_tsv(&rows);
    assert_eq!(tsv.lines().count(), 4);
    assert!(tsv.starts_with("p_a\tp_b\tK"));
    assert!(matches!(reliability_table(&[], &[4], 10, 0), Err(Error::Input(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bound_never_exceeds_the_approximation(pa in 0.0f64..1.0, pb in 0.0f64..1.0, k in 1usize..32) {
        prop_assume!(pa > pb);
        let m = SkillEvalModel::bernoulli_uniform(pa, pb, k).unwrap();
        let (d, s) = gap_and_sigma(&m);
        prop_assert!(ranking_bound(d, k, 0.0, 1.0).unwrap() <= ranking_probability(d, s) + 1e-12);
    }

    #[test]
    fn phi_is_monotone(a in -6.0f64..6.0, b in -6.0f64..6.0) {
        prop_assume!(a < b);
        prop_assert!(phi(a) <= phi(b));
    }
}
