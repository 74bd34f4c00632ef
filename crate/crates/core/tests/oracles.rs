//! Cross-module checks against brute-force oracles on small random instances.

use morl_core::fixtures;
use morl_core::frank_wolfe::fw_best_response;
use morl_core::game::{run_repeated_game, ExactTabularEvaluator, ExactTabularResponder, GameConfig};
use morl_core::mdp::EpisodicMdp;
use morl_core::oracle::{deterministic_value_points, max_reformulated_over_hull, project_bruteforce};
use morl_core::regulator::{project_lambda, StepSize};
use morl_core::tabular::{backward_induction, occupancy_of_policy, policy_values, TabularMdp, TabularPolicy};
use proptest::prelude::*;

fn random_policy(mdp: &TabularMdp, weights: &[f64]) -> TabularPolicy {
    let (s, a, h) = (mdp.n_states(), mdp.n_actions(), mdp.horizon());
    let probs: Vec<f64> = (0..h * s)
        .flat_map(|k| {
            let raw: Vec<f64> = (0..a).map(|j| weights[(k * a + j) % weights.len()] + 1e-3).collect();
            let z: f64 = raw.iter().sum();
            raw.into_iter().map(move |x| x / z)
        })
        .collect();
    TabularPolicy::from_probs(s, a, h, probs).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_matches_bruteforce(v in proptest::collection::vec(-5.0f64..5.0, 1..5), cap in 0.1f64..6.0) {
        let fast = project_lambda(&v, cap);
        let slow = project_bruteforce(&v, cap);
        prop_assert!(fast.iter().all(|&x| x >= 0.0));
        prop_assert!(fast.iter().sum::<f64>() <= cap);
        for (x, y) in fast.iter().zip(&slow) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn occupancy_mass_flow_and_values(seed in 0u64..10_000, s in 1usize..5, a in 1usize..4, h in 1usize..6,
                                      w in proptest::collection::vec(0.0f64..1.0, 1..12)) {
        let mdp = TabularMdp::random(s, a, h, 2, seed);
        let pi = random_policy(&mdp, &w);
        let d = occupancy_of_policy(&mdp, &pi).unwrap();
        prop_assert!((d.total() - h as f64).abs() <= 1e-9);
        prop_assert!(d.flow_residual(&mdp) <= 1e-9);
        let from_d: Vec<f64> = mdp.rewards().iter().map(|r| d.value(r)).collect();
        let direct = policy_values(&mdp, &pi).unwrap();
        for (x, y) in from_d.iter().zip(&direct) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn backward_induction_attains_the_best_deterministic_value(seed in 0u64..10_000, s in 1usize..3, h in 1usize..4) {
        let mdp = TabularMdp::random(s, 2, h, 1, seed);
        let bi = backward_induction(&mdp, mdp.reward(0)).unwrap();
        let best = deterministic_value_points(&mdp).iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((bi.value - best).abs() <= 1e-9);
    }

    #[test]
    fn frank_wolfe_gap_bounds_distance_to_hull_optimum(seed in 0u64..10_000, lambda in 0.0f64..2.0, frac in 0.1f64..0.9) {
        let mdp = TabularMdp::random(2, 2, 2, 2, seed);
        let alpha = vec![frac * mdp.horizon() as f64];
        let res = fw_best_response(&mdp, lambda, &alpha, 2000, 1e-6).unwrap();
        let oracle = max_reformulated_over_hull(&deterministic_value_points(&mdp), lambda, &alpha);
        prop_assert!(res.value <= oracle + 1e-9);
        prop_assert!(oracle - res.value <= res.state.gap + 1e-9);
    }
}

#[test]
fn exact_game_multipliers_stay_in_the_set_and_regret_is_bounded() {
    for (h, cap, rounds) in [(1, 2.0, 50), (5, 2.0, 200), (10, 4.0, 400)] {
        let toy = fixtures::toy_game(h, cap);
        let g = h as f64 / 2.0;
        let cfg = GameConfig { rounds, step: StepSize::Theoretical { rounds, grad_bound: g }, lambda0: None, tightening: None };
        let out = run_repeated_game(&mut ExactTabularResponder { mdp: &toy.mdp }, &ExactTabularEvaluator { mdp: &toy.mdp }, &toy.spec, h, &cfg)
            .unwrap();
        for r in &out.trace.records {
            assert!(r.lambda_next.iter().all(|&x| x >= 0.0) && r.lambda_next.iter().sum::<f64>() <= cap);
        }
        let bound = toy.spec.diameter() * g * (rounds as f64).sqrt();
        assert!(out.trace.realized_regret().unwrap() <= bound);
    }
}

#[test]
fn tightening_changes_play_but_not_the_feasibility_verdict() {
    let toy = fixtures::toy_game(4, 2.0);
    let base = GameConfig { rounds: 30, step: StepSize::Constant { eta: 0.2 }, lambda0: None, tightening: None };
    let tight = GameConfig { tightening: Some(vec![0.5]), ..base.clone() };
    let run = |cfg: &GameConfig| {
        run_repeated_game(&mut ExactTabularResponder { mdp: &toy.mdp }, &ExactTabularEvaluator { mdp: &toy.mdp }, &toy.spec, 4, cfg).unwrap()
    };
    let (a, b) = (run(&base), run(&tight));
    assert_ne!(a.trace.records.last().unwrap().lambda, b.trace.records.last().unwrap().lambda);
    for r in &b.trace.records {
        let expected: Vec<f64> = toy.spec.alpha.iter().zip(r.values.constraints()).map(|(al, v)| al - v).collect();
        assert_eq!(r.slacks, expected);
        assert_eq!(r.feasible, r.slacks.iter().all(|&s| s >= 0.0));
    }
}
