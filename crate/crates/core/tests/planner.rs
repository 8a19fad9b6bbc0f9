mod common;

use common::*;
use homdp_core::planner::{alpha_backup, belief_update, simulation_gap_check};
use homdp_core::*;
use proptest::prelude::*;

#[test]
fn identity_emission_matches_mdp_optimum() {
    let mut rng = RngStream::new(11);
    for _ in 0..20 {
        let base = random_model(&mut rng, 3, 3, 2, 3, true);
        let eye = EmissionTable::from_nested(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let m = HomdpModel::new(3, base.rho.clone(), base.trans.clone(), eye, base.reward.clone()).unwrap();
        let v = pop_plan(&m.pomdp(), Budget::default()).unwrap().value;
        assert!((v - mdp_optimum(&m)).abs() < 1e-12);
    }
}

#[test]
fn planned_value_is_achieved_and_dominates_uniform() {
    let mut rng = RngStream::new(12);
    for i in 0..30 {
        let m = random_model(&mut rng, 3, 2, 2, 3, i % 2 == 0);
        let plan = pop_plan(&m.pomdp(), Budget::default()).unwrap();
        assert!((plan.value - oracle_value(&m, &plan.policy)).abs() < 1e-12);
        assert!(plan.value + 1e-12 >= oracle_value(&m, &UniformPolicy));
    }
}

#[test]
fn belief_chain_matches_path_sum() {
    let mut rng = RngStream::new(13);
    for _ in 0..20 {
        let m = random_model(&mut rng, 3, 3, 2, 4, false);
        let p = m.pomdp();
        let tau = ObservedHistory::new(vec![0, 2, 1, 1], vec![1, 0, 1]);
        let mut b = Belief::initial(&p, tau.obs[0]).unwrap();
        for k in 1..tau.obs.len() {
            b = belief_update(&p, &b, tau.acts[k - 1], tau.obs[k]).unwrap();
        }
        let oracle = posterior_bruteforce(&m, &tau);
        for (a, o) in b.probs.iter().zip(&oracle) {
            assert!((a - o).abs() < 1e-12);
        }
    }
}

#[test]
fn impossible_observation_is_an_error() {
    let mut rng = RngStream::new(14);
    let base = random_model(&mut rng, 2, 2, 2, 2, false);
    let eye = EmissionTable::from_nested(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let stay = TransitionTable::from_nested(&[
        vec![vec![1.0, 0.0], vec![1.0, 0.0]],
        vec![vec![0.0, 1.0], vec![0.0, 1.0]],
    ])
    .unwrap();
    let m = HomdpModel::new(2, base.rho.clone(), stay, eye, base.reward.clone()).unwrap();
    let b = Belief::point(2, 0);
    assert!(matches!(
        belief_update(&m.pomdp(), &b, 0, 1),
        Err(HomdpError::ImpossibleObservation { .. })
    ));
}

#[test]
fn budget_refuses_before_work() {
    let mut rng = RngStream::new(15);
    let m = random_model(&mut rng, 2, 3, 3, 6, false);
    assert!(matches!(pop_plan(&m.pomdp(), Budget(1000)), Err(HomdpError::BudgetExceeded { .. })));
    assert!(matches!(
        eval_policy_enum(&m.pomdp(), &UniformPolicy, Budget(1000)),
        Err(HomdpError::BudgetExceeded { .. })
    ));
}

#[test]
fn identical_models_have_zero_simulation_gap() {
    let mut rng = RngStream::new(16);
    let m = random_model(&mut rng, 3, 2, 2, 3, false);
    let g = simulation_gap_check(&m, &m, &UniformPolicy, Budget::default()).unwrap();
    assert_eq!(g.lhs, 0.0);
    assert_eq!(g.rhs_bound, 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn enumeration_agrees_with_oracle(seed in 0u64..10_000, x in 1usize..4, y in 1usize..4, a in 1usize..3, h in 1usize..4, stochastic: bool) {
        let mut rng = RngStream::new(seed);
        let m = random_model(&mut rng, x, y, a, h, seed % 2 == 0);
        let pi = HashedPolicy { seed, num_actions: a, stochastic };
        let v = eval_policy_enum(&m.pomdp(), &pi, Budget::default()).unwrap();
        prop_assert!((v - oracle_value(&m, &pi)).abs() < 1e-12);
        let tree = alpha_backup(&m.pomdp(), &pi, Budget::default()).unwrap();
        prop_assert!((v - tree.implied_value).abs() < 1e-12);
        prop_assert!(tree.check_bounds().is_ok());
    }

    #[test]
    fn optimum_dominates_any_deterministic_policy(seed in 0u64..10_000) {
        let mut rng = RngStream::new(seed);
        let m = random_model(&mut rng, 3, 2, 2, 3, true);
        let opt = pop_plan(&m.pomdp(), Budget::default()).unwrap().value;
        let pi = HashedPolicy { seed, num_actions: 2, stochastic: false };
        prop_assert!(opt + 1e-12 >= oracle_value(&m, &pi));
    }
}
