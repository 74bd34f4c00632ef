use super::scalarize::ScalarizedSpec;
use crate::error::{Error, Result};
use crate::mdp::{EpisodicMdp, Policy};
use crate::tabular::{backward_induction, occupancy_of_policy, TabularPolicy};

/// How far `policy` is from a best response to the scalarized reward, in
/// exact episodic value: `max_pi V_lambda(pi) - V_lambda(policy)`.
///
/// The policy is tabulated by querying it once per `(step, state)`, so it
/// must be deterministic (greedy Q-policies are).
pub fn best_response_gap<M: EpisodicMdp + ?Sized>(env: &M, policy: &dyn Policy, spec: &ScalarizedSpec) -> Result<f64> {
    let mdp = env
        .as_tabular()
        .ok_or_else(|| Error::Unsupported("best-response gap needs a tabular environment".into()))?;
    let reward = spec.table(mdp)?;
    let optimum = backward_induction(mdp, &reward)?.value;
    let tabulated = TabularPolicy::from_policy(mdp, policy, 1, 0);
    let achieved = occupancy_of_policy(mdp, &tabulated)?.value(&reward);
    Ok(optimum - achieved)
}

/// Exact gap for a policy already in tabular form (stochastic allowed).
pub fn tabular_best_response_gap(
    mdp: &crate::tabular::TabularMdp,
    policy: &TabularPolicy,
    spec: &ScalarizedSpec,
) -> Result<f64> {
    let reward = spec.table(mdp)?;
    let optimum = backward_induction(mdp, &reward)?.value;
    Ok(optimum - occupancy_of_policy(mdp, policy)?.value(&reward))
}
