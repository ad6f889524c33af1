mod common;

use common::oracle::{exhaustive_worst_case, worst_case_oracle};
use common::{random_net, rng};
use radial_core::env::{Environment, GridChase, GridChaseConfig, TabularMdp, TabularMdpConfig};
use radial_core::eval::{acr_episode, action_bounds, awc, gwc, AwcOutcome};
use radial_core::nn::HeadKind;

#[test]
fn search_matches_exhaustive_enumeration() {
    let s = worst_case_oracle(16);
    assert_eq!(s.awc_exact_matches, s.instances, "{s:?}");
    assert_eq!(s.gwc_at_least_awc, s.instances, "{s:?}");
    assert!(s.branching > 0, "no instance exercised a choice: {s:?}");
}

#[test]
fn zero_radius_worst_case_is_the_greedy_episode() {
    let mut r = rng(1);
    for seed in 0..10 {
        let cfg = TabularMdpConfig::random(4, 3, 6, seed);
        let net = random_net(&mut r, 4, HeadKind::DuelingQ, 3, 2, 8);
        let mut env = TabularMdp::new(cfg.clone()).unwrap();
        let g = gwc(&net, &mut env, 0.0, 0).unwrap();
        let a = awc(&net, &mut env, 0.0, 0, 1_000_000).unwrap().exact().unwrap();
        let (oracle, _) = exhaustive_worst_case(&net, &cfg, 0.0);
        assert_eq!(g.reward, a);
        assert_eq!(a, oracle);
        let (certified, total) = acr_episode(&net, &mut env, 0.0, 0).unwrap();
        assert!(certified <= total);
    }
}

#[test]
fn budget_exhaustion_is_reported() {
    let mut r = rng(2);
    let cfg = TabularMdpConfig::random(6, 3, 8, 11);
    let net = random_net(&mut r, 6, HeadKind::DuelingQ, 3, 1, 4);
    let mut env = TabularMdp::new(cfg).unwrap();
    // A huge radius makes every action possible.
    match awc(&net, &mut env, 10.0, 0, 3).unwrap() {
        AwcOutcome::BudgetExhausted { nodes, .. } => assert_eq!(nodes, 3),
        other => panic!("{other:?}"),
    }
}

#[test]
fn possible_set_always_holds_the_greedy_action() {
    let mut r = rng(4);
    let mut env = GridChase::new(GridChaseConfig::default()).unwrap();
    let dim = env.spec().observation_dim;
    for i in 0..30 {
        let net = random_net(&mut r, dim, HeadKind::DuelingQ, 5, 2, 16);
        let obs = env.reset(i);
        for eps in [0.0, 0.01, 0.1, 1.0] {
            let b = action_bounds(&net, &obs, eps, env.spec().observation_range).unwrap();
            let greedy = radial_core::tensor::argmax(&b.values);
            assert!(b.possible().contains(&greedy));
            assert!(b.possible().contains(&b.worst_possible()));
        }
    }
}
