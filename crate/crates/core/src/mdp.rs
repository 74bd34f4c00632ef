//! Episodic MDP interface, policies, rollouts and Monte Carlo value estimates.

use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::tabular::TabularMdp;

/// What a policy sees at one decision step.
///
/// `state` is the discrete state index for tabular problems and `None` for
/// feature-only environments. `features` is the scaled feature vector used by
/// function approximators and always has the environment's `feature_dim`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Observation {
    pub state: Option<usize>,
    pub step: usize,
    pub features: Vec<f64>,
}

/// A finite-horizon environment with a vector of per-step rewards.
///
/// Index 0 of the reward vector is the objective, indices `1..=m` are the
/// constraint signals. The episode state owns its own random stream so that a
/// `(seed, action sequence)` pair fully determines the trajectory.
pub trait EpisodicMdp: Sync {
    type State: Clone + Send;

    fn horizon(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn reward_dim(&self) -> usize;
    fn feature_dim(&self) -> usize;

    fn reset(&self, seed: u64) -> Result<Self::State>;

    /// Writes the observation for `state` into `obs`, reusing its buffer.
    fn observe_into(&self, state: &Self::State, obs: &mut Observation);

    /// Advances one step, writing the reward vector into `reward`.
    fn step(&self, state: &mut Self::State, action: usize, reward: &mut [f64]) -> Result<()>;

    fn observe(&self, state: &Self::State) -> Observation {
        let mut obs = Observation::default();
        self.observe_into(state, &mut obs);
        obs
    }

    /// Exact tabular view, when the environment has one.
    fn as_tabular(&self) -> Option<&TabularMdp> {
        None
    }
}

/// A possibly stochastic, possibly non-stationary policy.
pub trait Policy: Send + Sync {
    fn act(&self, obs: &Observation, rng: &mut dyn RngCore) -> usize;

    /// Mixtures pick one member per episode; plain policies return `None`
    /// and play themselves.
    fn sample_member(&self, _rng: &mut dyn RngCore) -> Option<&dyn Policy> {
        None
    }
}

impl<P: Policy + ?Sized> Policy for Arc<P> {
    fn act(&self, obs: &Observation, rng: &mut dyn RngCore) -> usize {
        (**self).act(obs, rng)
    }

    fn sample_member(&self, rng: &mut dyn RngCore) -> Option<&dyn Policy> {
        (**self).sample_member(rng)
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn act(&self, obs: &Observation, rng: &mut dyn RngCore) -> usize {
        (**self).act(obs, rng)
    }

    fn sample_member(&self, rng: &mut dyn RngCore) -> Option<&dyn Policy> {
        (**self).sample_member(rng)
    }
}

/// A distribution over policies, sampled once per episode.
#[derive(Clone)]
pub struct PolicyMixture {
    members: Vec<Arc<dyn Policy>>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
}

impl PolicyMixture {
    pub fn new(members: Vec<Arc<dyn Policy>>, weights: Vec<f64>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Empty("mixture members"));
        }
        if members.len() != weights.len() {
            return Err(Error::Shape(format!(
                "{} members but {} weights",
                members.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
            return Err(Error::Validation(format!("mixture weight {w} is negative")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!("mixture weights sum to {total}")));
        }
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Ok(Self { members, weights, cumulative })
    }

    pub fn uniform(members: Vec<Arc<dyn Policy>>) -> Result<Self> {
        let n = members.len();
        if n == 0 {
            return Err(Error::Empty("mixture members"));
        }
        let w = 1.0 / n as f64;
        let mut weights = vec![w; n];
        // absorb rounding so the sum is exactly representable as 1
        let rest: f64 = weights[..n - 1].iter().sum();
        weights[n - 1] = 1.0 - rest;
        Self::new(members, weights)
    }

    pub fn members(&self) -> &[Arc<dyn Policy>] {
        &self.members
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sample_index(&self, rng: &mut dyn RngCore) -> usize {
        let u: f64 = rng.random();
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or_else(|| {
                // u landed past the last cumulative weight through rounding;
                // return the last member with positive weight
                self.weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
            })
    }
}

impl Policy for PolicyMixture {
    fn act(&self, obs: &Observation, rng: &mut dyn RngCore) -> usize {
        let i = self.sample_index(rng);
        self.members[i].act(obs, rng)
    }

    fn sample_member(&self, rng: &mut dyn RngCore) -> Option<&dyn Policy> {
        let i = self.sample_index(rng);
        Some(self.members[i].as_ref())
    }
}

/// Uniformly random actions.
#[derive(Debug, Clone, Copy)]
pub struct UniformPolicy {
    pub n_actions: usize,
}

impl Policy for UniformPolicy {
    fn act(&self, _obs: &Observation, rng: &mut dyn RngCore) -> usize {
        rng.random_range(0..self.n_actions)
    }
}

/// Always plays the same action.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy {
    pub action: usize,
}

impl Policy for ConstantPolicy {
    fn act(&self, _obs: &Observation, _rng: &mut dyn RngCore) -> usize {
        self.action
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub observation: Observation,
    pub action: usize,
    pub reward: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn returns(&self) -> Vec<f64> {
        let dim = self.steps.first().map_or(0, |s| s.reward.len());
        let mut out = vec![0.0; dim];
        for s in &self.steps {
            for (o, r) in out.iter_mut().zip(&s.reward) {
                *o += r;
            }
        }
        out
    }
}

fn check_action(action: usize, n_actions: usize) -> Result<()> {
    if action >= n_actions {
        return Err(Error::InvalidAction { action, n_actions });
    }
    Ok(())
}

/// Plays one episode and records every step.
///
/// The environment stream is `derive_seed(seed, 0)` and the policy stream is
/// `derive_seed(seed, 1)`; a mixture draws its member from the policy stream
/// before the first step.
pub fn rollout<M: EpisodicMdp + ?Sized>(
    mdp: &M,
    policy: &dyn Policy,
    seed: u64,
) -> Result<Trajectory> {
    let horizon = mdp.horizon();
    if horizon == 0 {
        return Err(Error::EmptyHorizon);
    }
    let mut state = mdp.reset(derive_seed(seed, 0))?;
    let mut rng = seeded(derive_seed(seed, 1));
    let policy = policy.sample_member(&mut rng).unwrap_or(policy);
    let mut steps = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let observation = mdp.observe(&state);
        let action = policy.act(&observation, &mut rng);
        check_action(action, mdp.n_actions())?;
        let mut reward = vec![0.0; mdp.reward_dim()];
        mdp.step(&mut state, action, &mut reward)?;
        steps.push(TrajectoryStep { observation, action, reward });
    }
    Ok(Trajectory { steps })
}

/// Plays one episode with the same streams as [`rollout`], accumulating only
/// the per-objective returns into `returns`.
pub fn episode_returns<M: EpisodicMdp + ?Sized>(
    mdp: &M,
    policy: &dyn Policy,
    seed: u64,
    returns: &mut [f64],
) -> Result<()> {
    let horizon = mdp.horizon();
    if horizon == 0 {
        return Err(Error::EmptyHorizon);
    }
    let mut state = mdp.reset(derive_seed(seed, 0))?;
    let mut rng = seeded(derive_seed(seed, 1));
    let policy = policy.sample_member(&mut rng).unwrap_or(policy);
    let mut obs = Observation::default();
    let mut reward = vec![0.0; mdp.reward_dim()];
    returns.iter_mut().for_each(|r| *r = 0.0);
    for _ in 0..horizon {
        mdp.observe_into(&state, &mut obs);
        let action = policy.act(&obs, &mut rng);
        check_action(action, mdp.n_actions())?;
        mdp.step(&mut state, action, &mut reward)?;
        for (acc, r) in returns.iter_mut().zip(&reward) {
            *acc += r;
        }
    }
    Ok(())
}

/// Sample means of episodic returns per objective with their standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueVector {
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    pub episodes: usize,
}

impl ValueVector {
    /// A value known exactly (zero standard error).
    pub fn exact(mean: Vec<f64>) -> Self {
        let std_err = vec![0.0; mean.len()];
        Self { mean, std_err, episodes: 0 }
    }

    pub fn objective(&self) -> f64 {
        self.mean[0]
    }

    /// Constraint values `v_1..v_m`.
    pub fn constraints(&self) -> &[f64] {
        &self.mean[1..]
    }

    /// Mean and standard error from per-episode return rows.
    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self> {
        let n = samples.len();
        if n == 0 {
            return Err(Error::Empty("episode samples"));
        }
        let dim = samples[0].len();
        // shifted by the first sample so identical samples give an exact mean
        // and exactly zero spread
        let shift = &samples[0];
        let mut sum = vec![0.0; dim];
        let mut sum_sq = vec![0.0; dim];
        for s in samples {
            for k in 0..dim {
                let d = s[k] - shift[k];
                sum[k] += d;
                sum_sq[k] += d * d;
            }
        }
        let nf = n as f64;
        let mean: Vec<f64> = (0..dim).map(|k| shift[k] + sum[k] / nf).collect();
        let std_err: Vec<f64> = (0..dim)
            .map(|k| {
                if n < 2 {
                    return 0.0;
                }
                let var = ((sum_sq[k] - sum[k] * sum[k] / nf) / (nf - 1.0)).max(0.0);
                (var / nf).sqrt()
            })
            .collect();
        Ok(Self { mean, std_err, episodes: n })
    }
}

/// Per-episode return rows for `n_episodes` independent episodes; episode `i`
/// uses seed `derive_seed(seed, i)`.
pub fn sample_returns<M: EpisodicMdp + ?Sized>(
    mdp: &M,
    policy: &dyn Policy,
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::with_capacity(n_episodes);
    for i in 0..n_episodes {
        let mut ret = vec![0.0; mdp.reward_dim()];
        episode_returns(mdp, policy, derive_seed(seed, i as u64), &mut ret)?;
        rows.push(ret);
    }
    Ok(rows)
}

/// Monte Carlo estimate of the episodic value of every objective.
pub fn estimate_values<M: EpisodicMdp + ?Sized>(
    mdp: &M,
    policy: &dyn Policy,
    n_episodes: usize,
    seed: u64,
) -> Result<ValueVector> {
    if n_episodes == 0 {
        return Err(Error::Config("n_episodes must be at least 1".into()));
    }
    ValueVector::from_samples(&sample_returns(mdp, policy, n_episodes, seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::tabular::{occupancy_of_policy, value_from_occupancy, TabularPolicy};

    #[test]
    fn single_step_deterministic_trajectory() {
        let mdp = fixtures::two_state_bandit(1.0);
        let traj = rollout(&mdp, &ConstantPolicy { action: 1 }, 3).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.steps[0].action, 1);
    }

    #[test]
    fn zero_horizon_is_an_error() {
        let mut mdp = fixtures::two_state_bandit(1.0);
        mdp.truncate_horizon(0);
        assert!(matches!(
            rollout(&mdp, &ConstantPolicy { action: 0 }, 1),
            Err(Error::EmptyHorizon)
        ));
    }

    #[test]
    fn rollout_is_deterministic_per_seed() {
        let mdp = TabularMdp::random(4, 3, 6, 2, 11);
        let pi = UniformPolicy { n_actions: 3 };
        assert_eq!(rollout(&mdp, &pi, 5).unwrap(), rollout(&mdp, &pi, 5).unwrap());
    }

    #[test]
    fn degenerate_mixture_matches_member() {
        let mdp = TabularMdp::random(4, 3, 6, 2, 12);
        let a: Arc<dyn Policy> = Arc::new(ConstantPolicy { action: 2 });
        let b: Arc<dyn Policy> = Arc::new(ConstantPolicy { action: 0 });
        let mix = PolicyMixture::new(vec![a.clone(), b], vec![1.0, 0.0]).unwrap();
        for seed in 0..20 {
            let t1 = rollout(&mdp, &mix, seed).unwrap();
            let t2 = rollout(&mdp, a.as_ref(), seed).unwrap();
            let a1: Vec<_> = t1.steps.iter().map(|s| s.action).collect();
            let a2: Vec<_> = t2.steps.iter().map(|s| s.action).collect();
            assert_eq!(a1, a2);
        }
    }

    #[test]
    fn mixture_weights_must_sum_to_one() {
        let a: Arc<dyn Policy> = Arc::new(ConstantPolicy { action: 0 });
        assert!(PolicyMixture::new(vec![a.clone(), a], vec![0.5, 0.4]).is_err());
    }

    #[test]
    fn deterministic_mdp_has_zero_standard_error() {
        let mdp = fixtures::deterministic_chain();
        let v = estimate_values(&mdp, &ConstantPolicy { action: 0 }, 25, 9).unwrap();
        assert!(v.std_err.iter().all(|&s| s == 0.0));
        let exact = occupancy_of_policy(&mdp, &TabularPolicy::constant(&mdp, 0)).unwrap();
        let v0 = value_from_occupancy(&exact, mdp.reward(0)).unwrap();
        assert!((v.mean[0] - v0).abs() < 1e-12);
    }

    #[test]
    fn stochastic_chain_matches_closed_form() {
        // three-state chain: from state k move right w.p. p, stay otherwise;
        // reward 1 only in the last state. closed form below.
        let p = 0.6;
        let horizon = 5;
        let mdp = fixtures::stochastic_chain(p, horizon);
        let analytic = fixtures::stochastic_chain_value(p, horizon);
        let v = estimate_values(&mdp, &ConstantPolicy { action: 0 }, 20_000, 4).unwrap();
        assert!(
            (v.mean[0] - analytic).abs() <= 3.0 * v.std_err[0],
            "{} vs {analytic} (se {})",
            v.mean[0],
            v.std_err[0]
        );
    }

    #[test]
    fn mixture_value_is_linear_in_weights() {
        let mdp = TabularMdp::random(4, 3, 5, 2, 21);
        let p0 = TabularPolicy::constant(&mdp, 0);
        let p1 = TabularPolicy::constant(&mdp, 2);
        let v0 = crate::tabular::policy_values(&mdp, &p0).unwrap();
        let v1 = crate::tabular::policy_values(&mdp, &p1).unwrap();
        let mix = PolicyMixture::new(vec![Arc::new(p0), Arc::new(p1)], vec![0.3, 0.7]).unwrap();
        let est = estimate_values(&mdp, &mix, 20_000, 77).unwrap();
        for i in 0..2 {
            let expected = 0.3 * v0[i] + 0.7 * v1[i];
            assert!(
                (est.mean[i] - expected).abs() <= 3.0 * est.std_err[i],
                "objective {i}: {} vs {expected}",
                est.mean[i]
            );
        }
    }
}
