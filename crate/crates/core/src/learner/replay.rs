use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Fixed-capacity ring buffer of transitions. Reward vectors are stored
/// unscalarized so the buffer stays valid when the multipliers change.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    feature_dim: usize,
    reward_dim: usize,
    len: usize,
    head: usize,
    obs: Vec<f64>,
    next_obs: Vec<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    done: Vec<bool>,
}

/// Borrowed view of one stored transition.
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub obs: &'a [f64],
    pub action: usize,
    pub reward: &'a [f64],
    pub next_obs: &'a [f64],
    pub done: bool,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, feature_dim: usize, reward_dim: usize) -> Self {
        Self {
            capacity,
            feature_dim,
            reward_dim,
            len: 0,
            head: 0,
            obs: vec![0.0; capacity * feature_dim],
            next_obs: vec![0.0; capacity * feature_dim],
            actions: vec![0; capacity],
            rewards: vec![0.0; capacity * reward_dim],
            done: vec![false; capacity],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Overwrites the oldest entry once full.
    pub fn push(&mut self, obs: &[f64], action: usize, reward: &[f64], next_obs: &[f64], done: bool) {
        let (f, r, i) = (self.feature_dim, self.reward_dim, self.head);
        self.obs[i * f..(i + 1) * f].copy_from_slice(obs);
        self.next_obs[i * f..(i + 1) * f].copy_from_slice(next_obs);
        self.rewards[i * r..(i + 1) * r].copy_from_slice(reward);
        self.actions[i] = action;
        self.done[i] = done;
        self.head = (self.head + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
    }

    pub fn get(&self, i: usize) -> Transition<'_> {
        let (f, r) = (self.feature_dim, self.reward_dim);
        Transition {
            obs: &self.obs[i * f..(i + 1) * f],
            action: self.actions[i],
            reward: &self.rewards[i * r..(i + 1) * r],
            next_obs: &self.next_obs[i * f..(i + 1) * f],
            done: self.done[i],
        }
    }

    /// Uniform sample of indices, with replacement.
    pub fn sample_indices(&self, batch: usize, rng: &mut ChaCha8Rng, out: &mut Vec<usize>) {
        out.clear();
        if self.len == 0 {
            return;
        }
        out.extend((0..batch).map(|_| rng.random_range(0..self.len)));
    }
}
