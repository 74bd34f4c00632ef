//! Episodic deep Q-learning on a scalarized reward: replay buffer, target
//! network, epsilon-greedy exploration.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::qnet::{Adam, Mlp, Workspace};
use super::replay::ReplayBuffer;
use super::scalarize::ScalarizedSpec;
use crate::error::{Error, Result};
use crate::mdp::{EpisodicMdp, Observation, Policy};
use crate::rng::{derive_seed, seeded, SimRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    /// Training episodes per call to the best-response oracle.
    pub episodes_per_round: usize,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Environment steps between target-network refreshes.
    pub target_sync_steps: usize,
    pub learning_rate: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Episodes over which epsilon decays linearly to `epsilon_end`.
    pub epsilon_decay_episodes: usize,
    pub hidden: Vec<usize>,
    pub gamma: f64,
    /// Environment steps between gradient updates.
    pub train_every: usize,
    /// Transitions collected before the first update.
    pub warmup_steps: usize,
    /// Multiplies the scalarized reward inside the Q-targets only; reported
    /// returns are unscaled.
    pub reward_scale: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    /// Keep Q parameters and replay contents between calls.
    pub warm_start: bool,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            episodes_per_round: 30,
            replay_capacity: 50_000,
            batch_size: 32,
            target_sync_steps: 500,
            learning_rate: 1e-3,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_episodes: 20,
            hidden: vec![32, 32],
            gamma: 0.99,
            train_every: 4,
            warmup_steps: 500,
            reward_scale: 1.0,
            grad_clip: 10.0,
            warm_start: true,
            seed: 0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("episodes_per_round", self.episodes_per_round),
            ("replay_capacity", self.replay_capacity),
            ("batch_size", self.batch_size),
            ("target_sync_steps", self.target_sync_steps),
            ("train_every", self.train_every),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("learner.{name} must be positive")));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("learner.hidden needs at least one positive layer width".into()));
        }
        for (name, e) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::Config(format!("learner.{name} must lie in [0, 1], got {e}")));
            }
        }
        if !(self.learning_rate > 0.0) || !(self.reward_scale > 0.0) || self.grad_clip < 0.0 {
            return Err(Error::Config("learning rate and reward scale must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("learner.gamma must lie in (0, 1], got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn epsilon(&self, episode: usize) -> f64 {
        if self.epsilon_decay_episodes == 0 {
            return self.epsilon_end;
        }
        let frac = (episode as f64 / self.epsilon_decay_episodes as f64).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub epsilon: f64,
    pub scalarized_return: f64,
    pub objective_returns: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub episodes: Vec<EpisodeRecord>,
}

impl TrainingCurve {
    /// CSV with columns `episode, scalarized_return, r0..rm`.
    pub fn to_csv(&self, labels: &[String]) -> String {
        let mut out = String::from("episode,scalarized_return");
        for l in labels {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
        for e in &self.episodes {
            let _ = write!(out, "{},{}", e.episode, e.scalarized_return);
            for r in &e.objective_returns {
                let _ = write!(out, ",{r}");
            }
            out.push('\n');
        }
        out
    }

    pub fn scalarized(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.scalarized_return).collect()
    }
}

fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Greedy policy of a frozen Q-network; ties go to the lowest action index.
#[derive(Debug, Clone)]
pub struct QPolicy {
    net: Arc<Mlp>,
}

impl QPolicy {
    pub fn new(net: Mlp) -> Self {
        Self { net: Arc::new(net) }
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn q_values(&self, features: &[f64]) -> Vec<f64> {
        let mut ws = self.net.workspace();
        self.net.forward(features, &mut ws).to_vec()
    }

    pub fn to_bytes(&self, config_digest: &[u8; 32]) -> Vec<u8> {
        self.net.to_bytes(config_digest)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, [u8; 32])> {
        let (net, digest) = Mlp::from_bytes(bytes)?;
        Ok((Self::new(net), digest))
    }
}

impl Policy for QPolicy {
    fn act(&self, obs: &Observation, _rng: &mut dyn RngCore) -> usize {
        argmax(&self.q_values(&obs.features))
    }
}

/// Q-learning state that can persist across best-response calls.
#[derive(Debug, Clone)]
pub struct DqnLearner {
    cfg: LearnerConfig,
    n_actions: usize,
    reward_dim: usize,
    online: Mlp,
    target: Mlp,
    opt: Adam,
    replay: ReplayBuffer,
    rng: SimRng,
    env_steps: usize,
    updates: usize,
    episodes_done: usize,
    ws_online: Workspace,
    ws_target: Workspace,
    grads: Vec<f64>,
    batch: Vec<usize>,
}

impl DqnLearner {
    pub fn new(cfg: LearnerConfig, feature_dim: usize, n_actions: usize, reward_dim: usize) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded(derive_seed(cfg.seed, 0x71));
        let mut sizes = vec![feature_dim];
        sizes.extend(&cfg.hidden);
        sizes.push(n_actions);
        let online = Mlp::new(&sizes, &mut rng)?;
        let target = online.clone();
        let n_params = online.params().len();
        let clip = (cfg.grad_clip > 0.0).then_some(cfg.grad_clip);
        Ok(Self {
            opt: Adam::new(n_params, cfg.learning_rate, clip),
            replay: ReplayBuffer::new(cfg.replay_capacity, feature_dim, reward_dim),
            ws_online: online.workspace(),
            ws_target: target.workspace(),
            grads: vec![0.0; n_params],
            batch: Vec::with_capacity(cfg.batch_size),
            rng,
            n_actions,
            reward_dim,
            online,
            target,
            env_steps: 0,
            updates: 0,
            episodes_done: 0,
            cfg,
        })
    }

    pub fn for_env<M: EpisodicMdp + ?Sized>(cfg: LearnerConfig, env: &M) -> Result<Self> {
        Self::new(cfg, env.feature_dim(), env.n_actions(), env.reward_dim())
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    pub fn online(&self) -> &Mlp {
        &self.online
    }

    pub fn target(&self) -> &Mlp {
        &self.target
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    pub fn greedy_policy(&self) -> QPolicy {
        QPolicy::new(self.online.clone())
    }

    /// Fresh parameters and an empty buffer, keeping the episode counter so
    /// later episodes still use new seeds.
    pub fn reinitialize(&mut self) -> Result<()> {
        let episodes_done = self.episodes_done;
        let reinit_seed = derive_seed(self.cfg.seed, 0x1000 + episodes_done as u64);
        let mut cfg = self.cfg.clone();
        cfg.seed = reinit_seed;
        let fresh = Self::new(cfg, self.online.n_inputs(), self.n_actions, self.reward_dim)?;
        let seed = self.cfg.seed;
        *self = Self { episodes_done, ..fresh };
        self.cfg.seed = seed;
        Ok(())
    }

    /// Runs `episodes` epsilon-greedy training episodes on the scalarized
    /// reward and returns their curve.
    pub fn train<M: EpisodicMdp + ?Sized>(
        &mut self,
        env: &M,
        spec: &ScalarizedSpec,
        episodes: usize,
    ) -> Result<TrainingCurve> {
        spec.validate()?;
        if env.reward_dim() != spec.m() + 1 {
            return Err(Error::Shape(format!(
                "environment has {} reward signals, multipliers cover {}",
                env.reward_dim(),
                spec.m() + 1
            )));
        }
        if env.n_actions() != self.n_actions || env.feature_dim() != self.online.n_inputs() {
            return Err(Error::Shape("learner was built for a different environment".into()));
        }
        let horizon = env.horizon();
        if horizon == 0 {
            return Err(Error::EmptyHorizon);
        }
        let mut curve = TrainingCurve::default();
        let mut obs = Observation::default();
        let mut next = Observation::default();
        let mut reward = vec![0.0; env.reward_dim()];
        for e in 0..episodes {
            let episode_index = self.episodes_done;
            let eps = self.cfg.epsilon(e);
            let mut state = env.reset(derive_seed(self.cfg.seed, 0x10_0000 + episode_index as u64))?;
            env.observe_into(&state, &mut obs);
            let mut scalar_return = 0.0;
            let mut returns = vec![0.0; env.reward_dim()];
            for t in 0..horizon {
                let action = if self.rng.random::<f64>() < eps {
                    self.rng.random_range(0..self.n_actions)
                } else {
                    argmax(self.online.forward(&obs.features, &mut self.ws_online))
                };
                env.step(&mut state, action, &mut reward)?;
                env.observe_into(&state, &mut next);
                let done = t + 1 == horizon;
                self.replay.push(&obs.features, action, &reward, &next.features, done);
                scalar_return += spec.apply(&reward);
                for (acc, r) in returns.iter_mut().zip(&reward) {
                    *acc += r;
                }
                self.env_steps += 1;
                if self.replay.len() >= self.cfg.warmup_steps.max(self.cfg.batch_size)
                    && self.env_steps % self.cfg.train_every == 0
                {
                    let loss = self.update(spec);
                    if !loss.is_finite() || !self.online.all_finite() {
                        return Err(Error::Diverged { episode: episode_index });
                    }
                }
                if self.env_steps % self.cfg.target_sync_steps == 0 {
                    self.sync_target();
                }
                std::mem::swap(&mut obs, &mut next);
            }
            curve.episodes.push(EpisodeRecord {
                episode: e,
                epsilon: eps,
                scalarized_return: scalar_return,
                objective_returns: returns,
            });
            self.episodes_done += 1;
        }
        Ok(curve)
    }

    pub fn sync_target(&mut self) {
        self.target.params_mut().copy_from_slice(self.online.params());
    }

    /// One minibatch step on `0.5 * (Q(s,a) - y)^2` with
    /// `y = scale * r_lambda + gamma * max_a' Q_target(s', a')` (no bootstrap
    /// on the final step). Returns the mean loss before the step.
    fn update(&mut self, spec: &ScalarizedSpec) -> f64 {
        let Self { replay, rng, online, target, ws_online, ws_target, grads, batch, opt, cfg, .. } = self;
        replay.sample_indices(cfg.batch_size, rng, batch);
        grads.iter_mut().for_each(|g| *g = 0.0);
        let inv_b = 1.0 / batch.len() as f64;
        let mut out_grad = vec![0.0; online.n_outputs()];
        let mut loss = 0.0;
        for &i in batch.iter() {
            let tr = replay.get(i);
            let mut y = cfg.reward_scale * spec.apply(tr.reward);
            if !tr.done {
                let q_next = target.forward(tr.next_obs, ws_target);
                y += cfg.gamma * q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            }
            let q = online.forward(tr.obs, ws_online);
            let delta = q[tr.action] - y;
            loss += 0.5 * delta * delta * inv_b;
            out_grad.iter_mut().for_each(|g| *g = 0.0);
            out_grad[tr.action] = delta * inv_b;
            online.backward(ws_online, &out_grad, grads);
        }
        opt.step(online.params_mut(), grads);
        self.updates += 1;
        loss
    }
}

/// Trains a fresh learner and returns its greedy policy plus training curve.
pub fn train_best_response<M: EpisodicMdp + ?Sized>(
    env: &M,
    spec: &ScalarizedSpec,
    cfg: &LearnerConfig,
) -> Result<(QPolicy, TrainingCurve)> {
    let mut learner = DqnLearner::for_env(cfg.clone(), env)?;
    let curve = learner.train(env, spec, cfg.episodes_per_round)?;
    Ok((learner.greedy_policy(), curve))
}
