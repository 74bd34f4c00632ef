//! Small tabular instances with known structure, shared by tests, the
//! acceptance suite and the `testbed` command.

use crate::mdp::EpisodicMdp;
use crate::regulator::ConstraintSpec;
use crate::tabular::{backward_induction, occupancy_of_policy, SaTable, TabularMdp, TabularPolicy};

/// One state per episode start (two states, uniform start), horizon 1, one
/// objective. In state 0 action 1 pays `gap` more, in state 1 action 0 does.
pub fn two_state_bandit(gap: f64) -> TabularMdp {
    let stay = vec![vec![vec![0.5, 0.5]; 2]; 2];
    let r0 = SaTable::from_rows(&[vec![0.0, gap], vec![gap, 0.0]]).unwrap();
    TabularMdp::stationary(1, stay, vec![r0], vec![0.5, 0.5]).unwrap()
}

/// Deterministic three-state chain (action 0 moves right, action 1 stays),
/// horizon 4, two objectives.
pub fn deterministic_chain() -> TabularMdp {
    let trans = vec![
        vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]],
        vec![vec![0.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]],
        vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]],
    ];
    let r0 = SaTable::from_rows(&[vec![0.0, 0.1], vec![0.5, 0.2], vec![1.0, 1.0]]).unwrap();
    let r1 = SaTable::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.3, 0.3]]).unwrap();
    TabularMdp::stationary(4, trans, vec![r0, r1], vec![1.0, 0.0, 0.0]).unwrap()
}

/// Three-state chain with a single action: from state k move to k+1 with
/// probability `p`, otherwise stay; the last state absorbs. Reward 1 per step
/// spent in the last state. Starts in state 0.
pub fn stochastic_chain(p: f64, horizon: usize) -> TabularMdp {
    let trans = vec![vec![vec![1.0 - p, p, 0.0]], vec![vec![0.0, 1.0 - p, p]], vec![vec![0.0, 0.0, 1.0]]];
    let r0 = SaTable::from_rows(&[vec![0.0], vec![0.0], vec![1.0]]).unwrap();
    TabularMdp::stationary(horizon, trans, vec![r0], vec![1.0, 0.0, 0.0]).unwrap()
}

/// Closed-form value of [`stochastic_chain`]: at step `h` the chain is in the
/// last state iff at least two of `h` Bernoulli(p) moves succeeded.
pub fn stochastic_chain_value(p: f64, horizon: usize) -> f64 {
    (0..horizon)
        .map(|h| {
            let h = h as i32;
            let q = 1.0 - p;
            let none = q.powi(h);
            let one = if h >= 1 { h as f64 * p * q.powi(h - 1) } else { 0.0 };
            1.0 - none - one
        })
        .sum()
}

/// Two states, two actions, every transition uniform, uniform start.
pub fn symmetric_two_state(horizon: usize) -> TabularMdp {
    let trans = vec![vec![vec![0.5, 0.5]; 2]; 2];
    let r0 = SaTable::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    TabularMdp::stationary(horizon, trans, vec![r0], vec![0.5, 0.5]).unwrap()
}

/// One constraint, two actions, a single state: action 0 earns more but
/// consumes the constrained resource.
#[derive(Debug, Clone)]
pub struct ToyGame {
    pub mdp: TabularMdp,
    pub spec: ConstraintSpec,
}

/// Toy Lagrangian game with exactly two deterministic policies. Per step,
/// action 0 pays objective 1.0 and constraint signal 1.0, action 1 pays 0.2
/// and 0.0. The constraint caps the expected signal at half the horizon, so
/// the constrained optimum mixes the two actions evenly and is worth
/// `0.6 * horizon` with multiplier 0.8.
pub fn toy_game(horizon: usize, cap: f64) -> ToyGame {
    let trans = vec![vec![vec![1.0]; 2]];
    let r0 = SaTable::from_rows(&[vec![1.0, 0.2]]).unwrap();
    let r1 = SaTable::from_rows(&[vec![1.0, 0.0]]).unwrap();
    let mdp = TabularMdp::stationary(horizon, trans, vec![r0, r1], vec![1.0]).unwrap();
    let spec = ConstraintSpec::new(vec![0.5 * horizon as f64], vec![1.0], cap, vec!["usage".into()]).unwrap();
    ToyGame { mdp, spec }
}

/// States: 0 = safe, 1 = left danger region, 2 = right danger region.
/// Actions: 0 = stay, 1 = go left, 2 = go right. Danger regions absorb.
/// Objective reward is higher in danger; constraint 1 counts steps spent
/// left, constraint 2 steps spent right.
#[derive(Debug, Clone)]
pub struct SafeLeftRight {
    pub mdp: TabularMdp,
    pub safe: TabularPolicy,
    pub left: TabularPolicy,
    pub right: TabularPolicy,
    /// Thresholds in "value <= alpha" orientation: half of the steps a
    /// left-going policy spends on the left, so an even Left/Right mixture
    /// sits exactly on both thresholds.
    pub alpha: Vec<f64>,
}

pub fn safe_left_right(horizon: usize) -> SafeLeftRight {
    let safe_row = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
    let trans = vec![safe_row, vec![vec![0.0, 1.0, 0.0]; 3], vec![vec![0.0, 0.0, 1.0]; 3]];
    let r0 = SaTable::from_rows(&[vec![0.5; 3], vec![1.0; 3], vec![1.0; 3]]).unwrap();
    let r_left = SaTable::from_rows(&[vec![0.0; 3], vec![1.0; 3], vec![0.0; 3]]).unwrap();
    let r_right = SaTable::from_rows(&[vec![0.0; 3], vec![0.0; 3], vec![1.0; 3]]).unwrap();
    let mdp = TabularMdp::stationary(horizon, trans, vec![r0, r_left, r_right], vec![1.0, 0.0, 0.0]).unwrap();
    let safe = TabularPolicy::constant(&mdp, 0);
    let left = TabularPolicy::constant(&mdp, 1);
    let right = TabularPolicy::constant(&mdp, 2);
    let d_left = occupancy_of_policy(&mdp, &left).unwrap();
    let steps_left = d_left.value(mdp.reward(1));
    SafeLeftRight { mdp, safe, left, right, alpha: vec![0.5 * steps_left; 2] }
}

/// A reformulated-Lagrangian instance for the concave best-response solver:
/// maximize `V_0(d) - lambda * [max_i (V_i(d) - alpha_i)]_+`.
#[derive(Debug, Clone)]
pub struct FwInstance {
    pub name: &'static str,
    pub mdp: TabularMdp,
    pub lambda: f64,
    /// "value <= alpha" orientation.
    pub alpha: Vec<f64>,
}

fn linear_optimum_values(mdp: &TabularMdp, reward: &SaTable) -> Vec<f64> {
    let bi = backward_induction(mdp, reward).unwrap();
    let d = occupancy_of_policy(mdp, &bi.policy).unwrap();
    mdp.rewards().iter().map(|r| d.value(r)).collect()
}

/// Five instances whose maximizer lies where the objective is locally linear
/// (no kink at the optimum):
///
/// * `unconstrained`: `lambda = 0`.
/// * `strictly_feasible`: the reward-optimal policy satisfies the constraint
///   with margin.
/// * `active_violated`: a small price makes violating optimal; the maximizer
///   of `r_0 - lambda r_1` violates strictly.
/// * `dominant_of_two`: two constraints, the first strictly dominates the max
///   at the optimum.
/// * `five_state_active`: as `active_violated` on a five-state MDP.
pub fn fw_suite() -> Vec<FwInstance> {
    let mut out = Vec::new();

    let mdp = TabularMdp::random(3, 2, 3, 2, 101);
    out.push(FwInstance { name: "unconstrained", alpha: vec![0.5], lambda: 0.0, mdp });

    let mdp = TabularMdp::random(3, 2, 3, 2, 102);
    let v = linear_optimum_values(&mdp, mdp.reward(0));
    out.push(FwInstance { name: "strictly_feasible", alpha: vec![v[1] + 0.5], lambda: 1.0, mdp });

    let mdp = TabularMdp::random(2, 2, 3, 2, 103);
    let lambda = 0.15;
    let v = linear_optimum_values(&mdp, &mdp.reward(0).add_scaled(mdp.reward(1), -lambda));
    out.push(FwInstance { name: "active_violated", alpha: vec![v[1] - 0.4], lambda, mdp });

    let mdp = TabularMdp::random(2, 2, 3, 3, 104);
    let lambda = 0.2;
    let v = linear_optimum_values(&mdp, &mdp.reward(0).add_scaled(mdp.reward(1), -lambda));
    out.push(FwInstance { name: "dominant_of_two", alpha: vec![v[1] - 0.5, v[2] - 0.1], lambda, mdp });

    let mdp = TabularMdp::random(5, 2, 2, 2, 105);
    let lambda = 0.1;
    let v = linear_optimum_values(&mdp, &mdp.reward(0).add_scaled(mdp.reward(1), -lambda));
    out.push(FwInstance { name: "five_state_active", alpha: vec![v[1] - 0.3], lambda, mdp });

    out
}

/// Instance for concentration checks: a random MDP with rewards and
/// constraint signals in [0, 1] and a handful of fixed deterministic policies.
#[derive(Debug, Clone)]
pub struct ConcentrationFixture {
    pub mdp: TabularMdp,
    pub policies: Vec<TabularPolicy>,
    pub alpha: Vec<f64>,
}

pub fn concentration_fixture(n_policies: usize) -> ConcentrationFixture {
    let mdp = TabularMdp::random(3, 2, 5, 2, 211);
    let mut rng_state = 0x9e37_79b9_u64;
    let policies = (0..n_policies)
        .map(|_| {
            let actions = (0..mdp.horizon())
                .map(|_| {
                    (0..mdp.n_states())
                        .map(|_| {
                            rng_state = crate::rng::derive_seed(rng_state, 7);
                            (rng_state % 2) as usize
                        })
                        .collect()
                })
                .collect::<Vec<Vec<usize>>>();
            TabularPolicy::deterministic(&mdp, &actions)
        })
        .collect();
    ConcentrationFixture { mdp, policies, alpha: vec![2.0] }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::policy_values;

    #[test]
    fn chain_closed_form_matches_dynamic_programming() {
        for &(p, h) in &[(0.6, 5), (0.3, 8), (1.0, 4)] {
            let mdp = stochastic_chain(p, h);
            let v = policy_values(&mdp, &TabularPolicy::constant(&mdp, 0)).unwrap()[0];
            assert!((v - stochastic_chain_value(p, h)).abs() < 1e-12);
        }
    }

    #[test]
    fn safe_left_right_thresholds_split_the_danger_time() {
        let f = safe_left_right(4);
        let vl = policy_values(&f.mdp, &f.left).unwrap();
        let vr = policy_values(&f.mdp, &f.right).unwrap();
        assert_eq!(vl[1], 3.0);
        assert_eq!(vr[2], 3.0);
        assert_eq!(f.alpha, vec![1.5, 1.5]);
    }
}
