mod common;

use common::HashedPolicy;
use homdp_core::hard::{disagreements, optimal_value_hard, posterior_argmax_policy, LeafPolicy};
use homdp_core::harness::{baseline_random, run_algorithm, AlgorithmInputs};
use homdp_core::*;

#[test]
fn every_policy_value_is_within_the_posterior_band() {
    let mut rng = RngStream::new(31);
    for &(x, y, eps) in &[(3, 4, 0.3), (7, 6, 0.2), (7, 8, 0.1)] {
        let spec = HardInstanceSpec::random(x, y, eps, &mut rng).unwrap();
        let m = build_hard_instance(&spec).unwrap();
        for k in 0..20 {
            let pi = HashedPolicy { seed: k, num_actions: 2, stochastic: k % 2 == 0 };
            let v = eval_policy_enum(&m.pomdp(), &pi, Budget::default()).unwrap();
            assert!(v >= 0.5 - eps / 2.0 - 1e-12 && v <= 0.5 + eps / 2.0 + 1e-12, "{v}");
        }
    }
}

#[test]
fn gap_equals_scaled_disagreements() {
    let mut rng = RngStream::new(32);
    let spec = HardInstanceSpec::random(7, 8, 0.25, &mut rng).unwrap();
    let m = build_hard_instance(&spec).unwrap();
    let (_, v_star) = optimal_value_hard(&spec, &m).unwrap();
    let scale = 2.0 * spec.epsilon / (spec.x_prime() * spec.y_prime()) as f64;
    for _ in 0..20 {
        let pi = LeafPolicy::random(&spec, &mut rng);
        let v = eval_policy_enum(&m.pomdp(), &pi, Budget::default()).unwrap();
        assert!((v_star - v - scale * disagreements(&spec, &pi)).abs() < 1e-12);
    }
    assert_eq!(disagreements(&spec, &posterior_argmax_policy(&spec)), 0.0);
}

#[test]
fn random_baseline_loses_half_epsilon_per_episode() {
    let spec = HardInstanceSpec::new(7, 6, 0.2).unwrap();
    let env = Environment::new(build_hard_instance(&spec).unwrap()).unwrap();
    let v = eval_policy_enum(&env.hidden_model().pomdp(), &baseline_random(&env), Budget::default()).unwrap();
    assert!((v - 0.5).abs() < 1e-12);
    let log = run_algorithm(&env, Algorithm::Random, &RunConfig::new(10, 0.1), &AlgorithmInputs::default(), 1).unwrap();
    assert!(log.rows.iter().all(|r| (r.regret_step - 0.1).abs() < 1e-12));
}

#[test]
fn sign_flip_swaps_the_optimal_action() {
    let spec = HardInstanceSpec::new(3, 4, 0.2).unwrap();
    let flipped = spec.clone().with_u(vec![-1]).unwrap();
    let (a, b) = (posterior_argmax_policy(&spec), posterior_argmax_policy(&flipped));
    for y in 2..4 {
        assert_ne!(a.action(0, y), b.action(0, y));
    }
}
